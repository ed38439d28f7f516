"""Loaders, writers, and deterministic sampling for instruction datasets.

Two wire formats are supported: Alpaca JSON (array of objects with
instruction/input/output keys) and JSONL (one full sample object per
line). ShareGPT conversation dumps load into Conversation objects with
alternation repair.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .prng import partial_shuffle
from .tokens import count_tokens

logger = logging.getLogger(__name__)

SOURCES = ("alpaca", "sharegpt", "synthetic")

DEFAULT_STOPLIST = ("stop", "continue", "go on", "more", "ok", "yes", "no", "thanks")

JSONL_KEYS = (
    "id", "instruction", "input", "output", "source", "complexity_level",
    "token_count",
)


class DatasetError(Exception):
    """Dataset cannot be loaded, validated, or written."""


class SchemaError(DatasetError):
    """An element does not match the expected wire schema."""


@dataclass
class InstructionSample:
    """One instruction/input/output triple with complexity metadata."""

    id: str
    instruction: str
    input: str = ""
    output: str = ""
    source: str = "alpaca"
    complexity_level: int | None = None
    token_count: int | None = None

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError(f"sample {self.id!r}: instruction is empty")
        if self.source not in SOURCES:
            raise ValueError(f"sample {self.id!r}: unknown source {self.source!r}")
        if self.complexity_level is not None and self.complexity_level < 0:
            raise ValueError(f"sample {self.id!r}: negative complexity_level")
        if self.token_count is not None and self.token_count < 0:
            raise ValueError(f"sample {self.id!r}: negative token_count")


@dataclass
class Turn:
    role: str  # "user" or "assistant"
    content: str


@dataclass
class Conversation:
    """Multi-turn exchange; roles strictly alternate starting with user."""

    id: str
    turns: list[Turn]


@dataclass
class SampleSet:
    items: list[InstructionSample]
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        _check_unique_ids(s.id for s in self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[InstructionSample]:
        return iter(self.items)

    def ids(self) -> list[str]:
        return [s.id for s in self.items]


@dataclass
class ConversationSet:
    items: list[Conversation]
    provenance: str = field(default="", compare=False)
    skipped_empty: int = field(default=0, compare=False)

    def __post_init__(self):
        _check_unique_ids(c.id for c in self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Conversation]:
        return iter(self.items)


def _check_unique_ids(ids) -> None:
    seen = set()
    for item_id in ids:
        if item_id in seen:
            raise DatasetError(f"duplicate id {item_id!r}")
        seen.add(item_id)


def _load_json_array(path: str | Path) -> list:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise DatasetError(f"cannot read {path}: {err}") from err
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        byte_offset = len(text[: err.pos].encode("utf-8"))
        raise DatasetError(
            f"malformed JSON in {path} at byte offset {byte_offset}: {err.msg}"
        ) from err
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a JSON array at top level")
    return data


def _sample_from_object(obj: dict, default_id: str, where: str) -> InstructionSample:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: element is not an object")
    for key in ("instruction", "output"):
        if key not in obj:
            raise SchemaError(f"{where}: missing required key {key!r}")
    try:
        return InstructionSample(
            id=str(obj.get("id", default_id)),
            instruction=obj["instruction"],
            input=obj.get("input") or "",
            output=obj["output"],
            source=obj.get("source", "alpaca"),
            complexity_level=obj.get("complexity_level"),
            token_count=obj.get("token_count"),
        )
    except ValueError as err:
        raise SchemaError(f"{where}: {err}") from err


def load_alpaca(path: str | Path) -> SampleSet:
    """Load an Alpaca-convention JSON array.

    Missing `input` is treated as empty; ids are synthesized from the
    zero-padded array position when absent so evolution records stay
    joinable to source rows.
    """
    data = _load_json_array(path)
    items = [
        _sample_from_object(obj, f"{idx:06d}", f"{path}[{idx}]")
        for idx, obj in enumerate(data)
    ]
    return SampleSet(items, provenance=f"alpaca:{path}")


def load_jsonl(path: str | Path) -> SampleSet:
    """Load a JSONL dataset, one sample object per line; blank lines skipped."""
    path = Path(path)
    items = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise DatasetError(f"cannot read {path}: {err}") from err
    for idx, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise DatasetError(
                f"malformed JSON on line {idx + 1} of {path}: {err.msg}"
            ) from err
        items.append(_sample_from_object(obj, f"{idx:06d}", f"{path}:{idx + 1}"))
    return SampleSet(items, provenance=f"jsonl:{path}")


_SHAREGPT_ROLES = {"human": "user", "gpt": "assistant"}


def _repair_turns(raw_turns: list[Turn]) -> list[Turn]:
    """Enforce user-first strict alternation.

    Empty-content turns are dropped, turns before the first user turn are
    dropped, and consecutive same-role turns are merged with a newline
    joiner (real ShareGPT dumps contain consecutive human turns).
    """
    turns = [t for t in raw_turns if t.content.strip()]
    while turns and turns[0].role != "user":
        turns.pop(0)
    merged: list[Turn] = []
    for turn in turns:
        if merged and merged[-1].role == turn.role:
            merged[-1] = Turn(turn.role, merged[-1].content + "\n" + turn.content)
        else:
            merged.append(Turn(turn.role, turn.content))
    return merged


def load_sharegpt(path: str | Path) -> ConversationSet:
    """Load a ShareGPT-convention JSON array of conversation objects.

    `from` values human/gpt map to user/assistant; anything else is a
    schema error. Conversations that are empty after repair are skipped
    and counted in `skipped_empty`.
    """
    data = _load_json_array(path)
    items = []
    skipped = 0
    for idx, obj in enumerate(data):
        where = f"{path}[{idx}]"
        if not isinstance(obj, dict):
            raise SchemaError(f"{where}: element is not an object")
        raw = []
        for turn in obj.get("conversations", []):
            speaker = turn.get("from")
            if speaker not in _SHAREGPT_ROLES:
                raise SchemaError(f"{where}: unknown 'from' value {speaker!r}")
            raw.append(Turn(_SHAREGPT_ROLES[speaker], turn.get("value") or ""))
        turns = _repair_turns(raw)
        if not turns:
            skipped += 1
            logger.warning("%s: empty conversation skipped", where)
            continue
        items.append(Conversation(id=str(obj.get("id", f"{idx:06d}")), turns=turns))
    return ConversationSet(items, provenance=f"sharegpt:{path}", skipped_empty=skipped)


def select_evolvable_turns(
    conversations: ConversationSet,
    stoplist: Sequence[str] = DEFAULT_STOPLIST,
    min_tokens: int = 5,
) -> list[tuple[str, int]]:
    """Pick, per conversation, the last user turn worth complexifying.

    A turn is excluded when its lowercase trimmed content equals a stoplist
    entry exactly (substring matching would discard substantive turns that
    merely contain "stop") or when its token count is below `min_tokens`.
    """
    if not stoplist:
        raise ValueError("stoplist must be non-empty")
    stopset = {entry.strip().lower() for entry in stoplist}
    selected = []
    for conv in conversations:
        turn_index = None
        for idx in range(len(conv.turns) - 1, -1, -1):
            if conv.turns[idx].role == "user":
                turn_index = idx
                break
        if turn_index is None:
            continue
        content = conv.turns[turn_index].content
        if content.strip().lower() in stopset:
            continue
        if count_tokens(content) < min_tokens:
            continue
        selected.append((conv.id, turn_index))
    return selected


def sample_subset(samples: SampleSet, n: int, seed: int) -> SampleSet:
    """Seeded Fisher-Yates partial shuffle: n distinct items, reproducible
    from (input order, n, seed)."""
    if n > len(samples):
        raise DatasetError(f"cannot sample {n} items from a set of {len(samples)}")
    chosen = partial_shuffle(samples.items, n, seed)
    return SampleSet(chosen, provenance=f"{samples.provenance} | subset(n={n}, seed={seed})")


def _sample_to_alpaca_object(sample: InstructionSample) -> dict:
    # Extra keys on top of the public three-key convention carry identity
    # and complexity metadata; third-party Alpaca consumers ignore them.
    obj = {
        "id": sample.id,
        "instruction": sample.instruction,
        "input": sample.input,
        "output": sample.output,
    }
    if sample.source != "alpaca":
        obj["source"] = sample.source
    if sample.complexity_level is not None:
        obj["complexity_level"] = sample.complexity_level
    if sample.token_count is not None:
        obj["token_count"] = sample.token_count
    return obj


def _sample_to_jsonl_object(sample: InstructionSample) -> dict:
    return {key: getattr(sample, key) for key in JSONL_KEYS}


def write_dataset(samples: SampleSet, path: str | Path, format: str = "alpaca_json") -> None:
    """Write a SampleSet so that loading the file yields an equal set.

    alpaca_json emits a pretty-printed JSON array; jsonl emits one compact
    object per line. Both are UTF-8 with non-ASCII preserved.
    """
    path = Path(path)
    if format == "alpaca_json":
        payload = json.dumps(
            [_sample_to_alpaca_object(s) for s in samples],
            ensure_ascii=False,
            indent=2,
        ) + "\n"
    elif format == "jsonl":
        payload = "".join(
            json.dumps(_sample_to_jsonl_object(s), ensure_ascii=False) + "\n"
            for s in samples
        )
    else:
        raise DatasetError(f"unknown dataset format {format!r}")
    try:
        path.write_text(payload, encoding="utf-8")
    except OSError as err:
        raise DatasetError(f"cannot write {path}: {err}") from err


def load_dataset(path: str | Path, format: str | None = None) -> SampleSet:
    """Load by explicit format, or infer from the file extension."""
    if format is None:
        format = "jsonl" if str(path).endswith(".jsonl") else "alpaca_json"
    if format == "alpaca_json":
        return load_alpaca(path)
    if format == "jsonl":
        return load_jsonl(path)
    raise DatasetError(f"unknown dataset format {format!r}")
