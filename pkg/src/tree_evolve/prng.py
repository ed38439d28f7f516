"""Seeded PRNG shared by every randomized operation in the toolkit.

All randomness flows through splitmix64 so that shuffles, subsets, and
offline expansions are reproducible across runs, platforms, and
implementations. No module may use `random` for anything that reaches an
output file.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

T = TypeVar("T")


class SplitMix64:
    """splitmix64 stream: state advances by the golden-ratio increment,
    output is the standard two-stage xor-shift-multiply mix."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return (z ^ (z >> 31)) & MASK64

    def next_below(self, bound: int) -> int:
        """Bounded draw as plain modulo; consumes exactly one output."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a decorrelated sub-seed: seed XOR first 8 bytes of SHA-256(purpose).

    Purpose strings are stable, documented constants so subcommands and
    workers are independently reproducible from one top-level seed.
    """
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return (seed ^ int.from_bytes(digest[:8], "big")) & MASK64


def partial_shuffle(items: Sequence[T], n: int, seed: int) -> list[T]:
    """First n items of a seeded Fisher-Yates shuffle.

    Step i swaps position i with i + (next_u64() % remaining); one PRNG
    output is consumed per step, including when remaining == 1.
    """
    if n < 0 or n > len(items):
        raise ValueError(f"cannot draw {n} items from {len(items)}")
    rng = SplitMix64(seed)
    pool = list(items)
    for i in range(n):
        j = i + rng.next_below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]


def shuffled(items: Sequence[T], seed: int) -> list[T]:
    """Full seeded Fisher-Yates permutation."""
    return partial_shuffle(items, len(items), seed)
