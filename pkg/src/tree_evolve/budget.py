"""Token accounting and token-budget matching between datasets.

Budget matching selects a subset of a simple-instruction pool whose total
token count approximates a complex set's total, so downstream comparisons
isolate complexity effects from token-count effects.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataset_io import InstructionSample, SampleSet
from .prng import shuffled
from .tokens import Tokenizer, count_tokens


@dataclass
class TokenStats:
    per_sample: dict[str, int]
    total: int
    mean: float

    def to_json_dict(self) -> dict:
        return {"total": self.total, "mean": self.mean, "per_sample": self.per_sample}


def sample_text(sample: InstructionSample) -> str:
    """Instruction, input, and output joined for counting; empty fields
    are dropped so they contribute no tokens."""
    return " ".join(p for p in (sample.instruction, sample.input, sample.output) if p)


def dataset_tokens(samples: SampleSet, tokenizer: Tokenizer | None = None) -> TokenStats:
    """Per-sample and aggregate token counts over instruction+input+output."""
    per_sample = {s.id: count_tokens(sample_text(s), tokenizer) for s in samples}
    total = sum(per_sample.values())
    mean = total / len(per_sample) if per_sample else 0.0
    return TokenStats(per_sample=per_sample, total=total, mean=mean)


@dataclass
class BudgetMatch:
    selected: SampleSet
    total_tokens: int
    target_tokens: int
    tolerance_fraction: float
    deviation_fraction: float
    within_tolerance: bool
    undershoot: bool

    def to_json_dict(self) -> dict:
        return {
            "selected_count": len(self.selected),
            "total_tokens": self.total_tokens,
            "target_tokens": self.target_tokens,
            "tolerance_fraction": self.tolerance_fraction,
            "deviation_fraction": self.deviation_fraction,
            "within_tolerance": self.within_tolerance,
            "undershoot": self.undershoot,
        }


def match_budget(
    pool: SampleSet,
    target_tokens: int,
    tolerance_fraction: float,
    seed: int,
    tokenizer: Tokenizer | None = None,
) -> BudgetMatch:
    """Greedy seeded budget matching.

    The pool is shuffled with the seed, then samples are taken while the
    running total is below the target; the walk stops as soon as the next
    sample would overshoot past target * (1 + tolerance). Whenever some
    prefix of the shuffled order lands within tolerance, the result does
    too. A pool smaller than the target is returned whole with the
    undershoot flag set.
    """
    if target_tokens <= 0:
        raise ValueError(f"target_tokens must be positive, got {target_tokens}")
    if tolerance_fraction < 0:
        raise ValueError("tolerance_fraction must be >= 0")

    counts = {s.id: count_tokens(sample_text(s), tokenizer) for s in pool}
    provenance = f"{pool.provenance} | budget(target={target_tokens}, seed={seed})"

    def finish(selected: list[InstructionSample], total: int) -> BudgetMatch:
        deviation = abs(total - target_tokens) / target_tokens
        return BudgetMatch(
            selected=SampleSet(selected, provenance=provenance),
            total_tokens=total,
            target_tokens=target_tokens,
            tolerance_fraction=tolerance_fraction,
            deviation_fraction=deviation,
            within_tolerance=deviation <= tolerance_fraction,
            undershoot=total < target_tokens,
        )

    pool_total = sum(counts.values())
    if pool_total < target_tokens:
        return finish(list(pool.items), pool_total)

    ceiling = target_tokens * (1 + tolerance_fraction)
    selected: list[InstructionSample] = []
    total = 0
    for sample in shuffled(pool.items, seed):
        if total >= target_tokens:
            break
        if total + counts[sample.id] > ceiling:
            break
        selected.append(sample)
        total += counts[sample.id]
    return finish(selected, total)
