"""Approximate token counting with a pluggable exact tokenizer.

The default counter is deterministic and tokenizer-free: split on Unicode
whitespace, each word contributes ceil(len/4) with a minimum of 1. Exact
counts for a specific model require passing that model's tokenizer as a
callable returning the token count for a string.
"""

from __future__ import annotations

from typing import Callable

Tokenizer = Callable[[str], int]


def default_count(text: str) -> int:
    total = 0
    for word in text.split():
        total += max(1, -(-len(word) // 4))
    return total


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    """Token count of `text` under the given tokenizer (default approximate)."""
    if tokenizer is not None:
        return tokenizer(text)
    return default_count(text)
