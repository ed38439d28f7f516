"""Controlled complexity evolution of instructions.

The engine rewrites an instruction by asking a backend to grow its
semantic tree by a target number of noun/verb nodes, then optionally
validates the achieved growth by re-extracting trees for both versions and
comparing content-node counts. A direct rewrite-to-harder prompt (applied
iteratively) is available as the sequence-level baseline method.
"""

from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field

from .dataset_io import Conversation, InstructionSample, SampleSet, Turn
from .llm_backend import Backend, BackendError
from .prng import derive_seed
from .prompts import (
    RESPONDER_SYSTEM,
    build_deepening_prompt,
    build_extraction_prompt,
    build_tree_instruct_prompt,
)
from .semantic_tree import TreeNode, TreeParseError, content_delta, parse_tree
from .tokens import count_tokens

logger = logging.getLogger(__name__)

METHODS = ("tree_instruct", "wizard_deepening")

STATUS_ACCEPTED = "accepted"
STATUS_ACCEPTED_UNVALIDATED = "accepted_unvalidated"
STATUS_FAILED = "failed"

# Substrings that mean the model leaked the rewriting procedure into the
# instruction instead of following it.
TEMPLATE_LEAK_MARKERS = ("TREE-1", "step-2")

_ECHO_LABEL_RE = re.compile(r"^\s*(?:new instruction|rewritten prompt)\s*:\s*", re.IGNORECASE)


class ExtractionError(BackendError):
    """Tree re-extraction failed after all attempts."""


@dataclass
class EvolutionConfig:
    target_added_nodes: int
    delta_tolerance: int = 2
    max_attempts: int = 3
    method: str = "tree_instruct"
    deepening_iterations: int = 3
    regenerate_responses: bool = False
    validate_delta: bool = False
    # The rewrite template ships as a single user message; set this to also
    # send a system message ahead of it.
    rewrite_system_prompt: str | None = None

    def __post_init__(self):
        if self.target_added_nodes < 1:
            raise ValueError("target_added_nodes must be positive")
        if self.delta_tolerance < 0:
            raise ValueError("delta_tolerance must be >= 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.deepening_iterations < 1:
            raise ValueError("deepening_iterations must be positive")
        # With a looser tolerance than the target, validation accepts a
        # zero-growth rewrite, which defeats its purpose.
        if self.target_added_nodes >= 3 and self.delta_tolerance >= self.target_added_nodes:
            raise ValueError(
                f"delta_tolerance {self.delta_tolerance} is vacuous for "
                f"target {self.target_added_nodes}"
            )


@dataclass
class AttemptLog:
    prompt_hash: str
    response_hash: str
    failure_reason: str | None = None


@dataclass
class EvolutionRecord:
    sample_id: str
    original_instruction: str
    evolved_instruction: str
    method: str
    target_added_nodes: int
    measured_delta: int | None
    attempts: list[AttemptLog]
    status: str
    evolved_output: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "original_instruction": self.original_instruction,
            "evolved_instruction": self.evolved_instruction,
            "method": self.method,
            "target_added_nodes": self.target_added_nodes,
            "measured_delta": self.measured_delta,
            "attempts": [
                {
                    "prompt_hash": a.prompt_hash,
                    "response_hash": a.response_hash,
                    "failure_reason": a.failure_reason,
                }
                for a in self.attempts
            ],
            "status": self.status,
            "evolved_output": self.evolved_output,
        }


def _text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def strip_response(text: str) -> str:
    """Remove echo artifacts: leading rewrite labels and wrapping quotes."""
    out = text.strip()
    for _ in range(2):
        stripped = _ECHO_LABEL_RE.sub("", out, count=1)
        if stripped == out:
            break
        out = stripped.strip()
    if len(out) >= 2 and out[0] == '"' and out[-1] == '"':
        out = out[1:-1].replace('\\"', '"').strip()
    return out


def degenerate_reason(evolved: str, original: str, max_tokens: int) -> str | None:
    """Why an evolved instruction is unusable, or None if it passes."""
    if not evolved:
        return "empty response"
    if evolved == original:
        return "echoed original instruction"
    for marker in TEMPLATE_LEAK_MARKERS:
        if marker in evolved:
            return f"template leak: {marker!r}"
    if count_tokens(evolved) > 4 * max_tokens:
        return "response longer than 4x the generation budget"
    return None


def extract_tree(
    instruction: str,
    backend: Backend,
    max_attempts: int = 3,
    seed: int = 0,
) -> TreeNode:
    """Obtain a semantic tree for an instruction via the backend.

    The backend is asked for a bare S-expression; each retry varies the
    request seed so a cached bad answer is not replayed. Raises
    ExtractionError once attempts are exhausted.
    """
    prompt = build_extraction_prompt(instruction)
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        request = backend.make_request(
            [{"role": "user", "content": prompt}],
            seed=derive_seed(seed, f"extract-attempt:{attempt}"),
        )
        response = backend.complete(request)
        try:
            return parse_tree(response.content)
        except TreeParseError as err:
            last_error = err
            logger.debug("extraction attempt %d failed: %s", attempt + 1, err)
    raise ExtractionError(f"no parseable tree after {max_attempts} attempts: {last_error}")


def run_deepening(
    instruction: str,
    iterations: int,
    backend: Backend,
    seed: int = 0,
) -> tuple[str, str, str]:
    """Iterated deepening chain; output of each round feeds the next.

    Returns (final instruction, last prompt, last raw response). Zero
    iterations return the instruction unevolved.
    """
    current = instruction
    prompt = ""
    raw = current
    for i in range(iterations):
        prompt = build_deepening_prompt(current)
        request = backend.make_request(
            [{"role": "user", "content": prompt}],
            seed=derive_seed(seed, f"deepen-iteration:{i}"),
        )
        raw = backend.complete(request).content
        current = strip_response(raw)
    return current, prompt, raw


def _regenerate_output(instruction: str, backend: Backend, seed: int) -> str:
    request = backend.make_request(
        [
            {"role": "system", "content": RESPONDER_SYSTEM},
            {"role": "user", "content": instruction},
        ],
        seed=derive_seed(seed, "regenerate-response"),
    )
    return backend.complete(request).content


def evolve_sample(
    sample: InstructionSample,
    config: EvolutionConfig,
    backend: Backend,
    seed: int = 0,
) -> EvolutionRecord:
    """Evolve one instruction, retrying up to max_attempts.

    Each attempt: build the rewrite prompt, complete, strip echo prefixes,
    run degenerate checks, and (when enabled) validate achieved complexity
    by re-extracting trees for the original and evolved instructions.
    Backend transport errors propagate; everything else becomes a logged
    failure reason.
    """
    sample_seed = derive_seed(seed, f"evolve:{sample.id}")
    attempts: list[AttemptLog] = []
    for attempt_index in range(config.max_attempts):
        attempt_seed = derive_seed(sample_seed, f"attempt:{attempt_index}")
        if config.method == "tree_instruct":
            prompt = build_tree_instruct_prompt(sample.instruction, config.target_added_nodes)
            messages = [{"role": "user", "content": prompt}]
            if config.rewrite_system_prompt is not None:
                messages.insert(0, {"role": "system", "content": config.rewrite_system_prompt})
            raw = backend.complete(backend.make_request(messages, seed=attempt_seed)).content
            evolved = strip_response(raw)
        else:
            evolved, prompt, raw = run_deepening(
                sample.instruction, config.deepening_iterations, backend, seed=attempt_seed
            )

        reason = degenerate_reason(evolved, sample.instruction, backend.max_tokens)
        measured: int | None = None
        if reason is None and config.validate_delta:
            try:
                old_tree = extract_tree(
                    sample.instruction, backend, seed=derive_seed(attempt_seed, "tree-old")
                )
                new_tree = extract_tree(
                    evolved, backend, seed=derive_seed(attempt_seed, "tree-new")
                )
                measured = content_delta(old_tree, new_tree)
                if abs(measured - config.target_added_nodes) > config.delta_tolerance:
                    reason = (
                        f"measured delta {measured} outside tolerance "
                        f"{config.delta_tolerance} of target {config.target_added_nodes}"
                    )
            except ExtractionError as err:
                reason = f"tree extraction failed: {err}"

        attempts.append(AttemptLog(_text_hash(prompt), _text_hash(raw), reason))
        if reason is not None:
            logger.debug("sample %s attempt %d rejected: %s", sample.id, attempt_index + 1, reason)
            continue

        evolved_output = None
        if config.regenerate_responses:
            evolved_output = _regenerate_output(evolved, backend, attempt_seed)
        return EvolutionRecord(
            sample_id=sample.id,
            original_instruction=sample.instruction,
            evolved_instruction=evolved,
            method=config.method,
            target_added_nodes=config.target_added_nodes,
            measured_delta=measured if config.validate_delta else None,
            attempts=attempts,
            status=STATUS_ACCEPTED if config.validate_delta else STATUS_ACCEPTED_UNVALIDATED,
            evolved_output=evolved_output,
        )

    return EvolutionRecord(
        sample_id=sample.id,
        original_instruction=sample.instruction,
        evolved_instruction="",
        method=config.method,
        target_added_nodes=config.target_added_nodes,
        measured_delta=None,
        attempts=attempts,
        status=STATUS_FAILED,
        evolved_output=None,
    )


def evolved_sample_from_record(
    record: EvolutionRecord, source: InstructionSample
) -> InstructionSample:
    """Materialize the accepted rewrite as a dataset sample."""
    output = record.evolved_output if record.evolved_output is not None else source.output
    text = " ".join(part for part in (record.evolved_instruction, source.input, output) if part)
    return InstructionSample(
        id=source.id,
        instruction=record.evolved_instruction,
        input=source.input,
        output=output,
        source="synthetic",
        complexity_level=record.target_added_nodes,
        token_count=count_tokens(text),
    )


def evolve_conversation(
    conversation: Conversation,
    turn_index: int,
    config: EvolutionConfig,
    backend: Backend,
    seed: int = 0,
) -> tuple[Conversation, EvolutionRecord]:
    """Evolve one user turn in place, non-destructively.

    On success the selected user turn is replaced with the evolved
    instruction and, when responses are regenerated, the following
    assistant turn is replaced too; every other turn is identical. On
    failure the conversation is returned unmodified.
    """
    if not 0 <= turn_index < len(conversation.turns):
        raise ValueError(f"turn index {turn_index} out of range")
    turn = conversation.turns[turn_index]
    if turn.role != "user":
        raise ValueError(f"turn {turn_index} is not a user turn")

    pseudo = InstructionSample(
        id=conversation.id, instruction=turn.content, output="", source="sharegpt"
    )
    record = evolve_sample(pseudo, config, backend, seed=seed)
    if record.status == STATUS_FAILED:
        return conversation, record

    turns = list(conversation.turns)
    turns[turn_index] = Turn("user", record.evolved_instruction)
    next_index = turn_index + 1
    if (
        record.evolved_output is not None
        and next_index < len(turns)
        and turns[next_index].role == "assistant"
    ):
        turns[next_index] = Turn("assistant", record.evolved_output)
    return Conversation(id=conversation.id, turns=turns), record


@dataclass
class BatchSummary:
    total: int
    accepted: int
    failed: int
    mean_measured_delta: float | None
    mean_original_tokens: float
    mean_evolved_tokens: float
    backend_calls: int
    cache_hits: int

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BatchResult:
    records: list[EvolutionRecord]
    evolved: SampleSet
    summary: BatchSummary


class BatchInterrupted(Exception):
    """Carries the records completed before an interrupt."""

    def __init__(self, records: list[EvolutionRecord]):
        super().__init__(f"interrupted after {len(records)} records")
        self.records = records


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def run_batch(
    samples: SampleSet,
    config: EvolutionConfig,
    backend: Backend,
    parallelism: int = 1,
    seed: int = 0,
) -> BatchResult:
    """Evolve every sample on a bounded worker pool.

    Exactly one record per sample; records and the evolved set are ordered
    by sample id, so output bytes do not depend on completion order.
    Per-sample failures (including backend errors) are captured in the
    record; only pool setup can abort the batch.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def evolve_one(sample: InstructionSample) -> EvolutionRecord:
        try:
            return evolve_sample(sample, config, backend, seed=seed)
        except BackendError as err:
            logger.warning("sample %s: backend error: %s", sample.id, err)
            return EvolutionRecord(
                sample_id=sample.id,
                original_instruction=sample.instruction,
                evolved_instruction="",
                method=config.method,
                target_added_nodes=config.target_added_nodes,
                measured_delta=None,
                attempts=[AttemptLog("", "", f"backend error: {err}")],
                status=STATUS_FAILED,
            )

    by_id = {sample.id: sample for sample in samples}
    records: list[EvolutionRecord] = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        pending = {pool.submit(evolve_one, sample) for sample in samples}
        try:
            while pending:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                records.extend(fut.result() for fut in done)
        except KeyboardInterrupt:
            for fut in pending:
                fut.cancel()
            records.sort(key=lambda r: r.sample_id)
            raise BatchInterrupted(records) from None

    records.sort(key=lambda r: r.sample_id)
    evolved_items = [
        evolved_sample_from_record(record, by_id[record.sample_id])
        for record in records
        if record.status != STATUS_FAILED
    ]
    evolved = SampleSet(evolved_items, provenance=f"evolved:{config.method}:{config.target_added_nodes}")

    deltas = [r.measured_delta for r in records if r.measured_delta is not None]
    summary = BatchSummary(
        total=len(records),
        accepted=len(evolved_items),
        failed=len(records) - len(evolved_items),
        mean_measured_delta=_mean(deltas) if deltas else None,
        mean_original_tokens=_mean(
            count_tokens(" ".join(p for p in (s.instruction, s.input, s.output) if p))
            for s in samples
        ),
        mean_evolved_tokens=_mean(s.token_count or 0 for s in evolved_items),
        backend_calls=backend.calls,
        cache_hits=backend.cache.hits,
    )
    return BatchResult(records=records, evolved=evolved, summary=summary)
