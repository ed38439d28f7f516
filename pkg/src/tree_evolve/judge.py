"""LLM-as-judge scoring with position-swap debiasing.

Pairwise judgments run twice, once per presentation order; the final
preference is the agreement of the two runs and any disagreement becomes a
tie, countering the judge's position bias. Absolute consistency scoring
asks for a single decimal in [0, 1].
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .llm_backend import Backend, BackendError
from .prng import derive_seed
from .prompts import build_consistency_prompt, build_pairwise_prompt

logger = logging.getLogger(__name__)

KIND_CONSISTENCY = "consistency_score"
KIND_PAIRWISE_CONSISTENCY = "pairwise_consistency"
KIND_PAIRWISE_WIN = "pairwise_win"

PAIRWISE_KINDS = (KIND_PAIRWISE_CONSISTENCY, KIND_PAIRWISE_WIN)

_DECIMAL_RE = re.compile(r"\d+(?:\.\d+)?")
# The verdict must be the first alphabetic token of the reply.
_LETTER_RE = re.compile(r"^[^A-Za-z]*(A|B|TIE)(?![A-Za-z])", re.IGNORECASE)


class JudgeParseError(BackendError):
    """Judge reply could not be parsed after a re-ask."""


@dataclass
class JudgeVerdict:
    kind: str
    judge_model: str
    score: float | None = None
    preference: str | None = None  # "A", "B", or "tie"
    order_ab: str | None = None  # raw letter with A presented first
    order_ba: str | None = None  # raw letter with B presented first

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)


def _ask(backend: Backend, prompt: str, seed: int) -> str:
    request = backend.make_request([{"role": "user", "content": prompt}], seed=seed)
    return backend.complete(request).content


def judge_consistency(
    original: str,
    evolved: str,
    backend: Backend,
    seed: int = 0,
) -> JudgeVerdict:
    """Score how well `evolved` preserves the objective of `original`.

    The first decimal in the reply is the score; out-of-range values are
    clamped with a warning, an unparseable reply is re-asked once.
    """
    if not original.strip() or not evolved.strip():
        raise ValueError("both texts must be non-empty")
    prompt = build_consistency_prompt(original, evolved)
    for attempt in range(2):
        reply = _ask(backend, prompt, derive_seed(seed, f"consistency:{attempt}"))
        match = _DECIMAL_RE.search(reply)
        if match is None:
            logger.warning("unparseable consistency reply %r, re-asking", reply[:80])
            continue
        score = float(match.group(0))
        if not 0.0 <= score <= 1.0:
            logger.warning("consistency score %s out of range, clamping", score)
            score = min(max(score, 0.0), 1.0)
        return JudgeVerdict(kind=KIND_CONSISTENCY, judge_model=backend.model, score=score)
    raise JudgeParseError(f"no decimal score in judge reply: {reply[:200]!r}")


def _ask_letter(backend: Backend, prompt: str, seed: int) -> str:
    for attempt in range(2):
        reply = _ask(backend, prompt, derive_seed(seed, f"letter:{attempt}"))
        match = _LETTER_RE.match(reply)
        if match is not None:
            return match.group(1).upper()
        logger.warning("unparseable pairwise reply %r, re-asking", reply[:80])
    raise JudgeParseError(f"no verdict letter in judge reply: {reply[:200]!r}")


def judge_pairwise(
    context: str,
    candidate_a: str,
    candidate_b: str,
    kind: str,
    backend: Backend,
    seed: int = 0,
) -> JudgeVerdict:
    """Two-order pairwise judgment.

    The judge sees (A, B) and then (B, A); `order_ab`/`order_ba` keep the
    raw letters from each presentation. The final preference is A or B only
    when both orders favor the same text, otherwise a tie.
    """
    if kind not in PAIRWISE_KINDS:
        raise ValueError(f"kind must be one of {PAIRWISE_KINDS}, got {kind!r}")
    if not candidate_a.strip() or not candidate_b.strip():
        raise ValueError("both candidates must be non-empty")

    prompt_ab = build_pairwise_prompt(context, candidate_a, candidate_b, kind)
    prompt_ba = build_pairwise_prompt(context, candidate_b, candidate_a, kind)
    order_ab = _ask_letter(backend, prompt_ab, derive_seed(seed, "order-ab"))
    order_ba = _ask_letter(backend, prompt_ba, derive_seed(seed, "order-ba"))

    favors_a = order_ab == "A" and order_ba == "B"
    favors_b = order_ab == "B" and order_ba == "A"
    preference = "A" if favors_a else "B" if favors_b else "tie"
    return JudgeVerdict(
        kind=kind,
        judge_model=backend.model,
        preference=preference,
        order_ab=order_ab,
        order_ba=order_ba,
    )


@dataclass
class WinRateStats:
    wins: int = 0
    losses: int = 0
    ties: int = 0

    @property
    def total(self) -> int:
        return self.wins + self.losses + self.ties

    @property
    def win_rate(self) -> float:
        # AlpacaEval convention: ties credited half a win.
        return (self.wins + 0.5 * self.ties) / self.total

    def to_json_dict(self) -> dict:
        return {
            "wins": self.wins,
            "losses": self.losses,
            "ties": self.ties,
            "win_rate": self.win_rate,
        }


@dataclass
class WinRateReport:
    overall: WinRateStats
    per_subset: dict[str, WinRateStats] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "overall": self.overall.to_json_dict(),
            "per_subset": {
                name: stats.to_json_dict()
                for name, stats in sorted(self.per_subset.items())
            },
        }

    def to_table(self) -> str:
        """Plain-text table, one row per subset plus the overall row."""
        rows = [("subset", "wins", "losses", "ties", "win_rate")]
        for name, stats in sorted(self.per_subset.items()):
            rows.append((
                name, str(stats.wins), str(stats.losses), str(stats.ties),
                f"{100 * stats.win_rate:.2f}%",
            ))
        rows.append((
            "overall", str(self.overall.wins), str(self.overall.losses),
            str(self.overall.ties), f"{100 * self.overall.win_rate:.2f}%",
        ))
        widths = [max(len(row[col]) for row in rows) for col in range(5)]
        lines = [
            "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
            for row in rows
        ]
        return "\n".join(lines)


def compute_win_rate(
    verdicts: list[JudgeVerdict],
    subset_labels: list[str] | None = None,
) -> WinRateReport:
    """Aggregate pairwise_win verdicts; preference A counts as a win."""
    if not verdicts:
        raise ValueError("cannot compute a win rate from zero verdicts")
    if subset_labels is not None and len(subset_labels) != len(verdicts):
        raise ValueError("subset_labels must be parallel to verdicts")
    overall = WinRateStats()
    per_subset: dict[str, WinRateStats] = {}
    for i, verdict in enumerate(verdicts):
        if verdict.kind != KIND_PAIRWISE_WIN:
            raise ValueError(f"verdict {i} has kind {verdict.kind!r}, expected pairwise_win")
        buckets = [overall]
        if subset_labels is not None:
            buckets.append(per_subset.setdefault(subset_labels[i], WinRateStats()))
        for bucket in buckets:
            if verdict.preference == "A":
                bucket.wins += 1
            elif verdict.preference == "B":
                bucket.losses += 1
            else:
                bucket.ties += 1
    return WinRateReport(overall=overall, per_subset=per_subset)


def write_verdicts(path: str | Path, verdicts: list[JudgeVerdict], pair_ids: list[str]) -> None:
    """Persist verdicts as JSONL, one object per line with its pair id."""
    lines = []
    for pair_id, verdict in zip(pair_ids, verdicts):
        lines.append(json.dumps({"pair_id": pair_id} | verdict.to_json_dict(), ensure_ascii=False))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_verdicts(path: str | Path) -> tuple[list[JudgeVerdict], list[str]]:
    verdicts = []
    pair_ids = []
    for idx, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        obj = json.loads(line)
        pair_ids.append(obj.pop("pair_id", str(idx)))
        verdicts.append(JudgeVerdict(**obj))
    return verdicts, pair_ids
