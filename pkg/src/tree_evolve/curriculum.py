"""Curriculum manifest generation for staged fine-tuning.

A manifest fixes the full training order once: easy-to-hard and
hard-to-easy place whole complexity levels in stage blocks, mixed is one
global seeded shuffle cut into equal stages by position. Re-shuffling
within an epoch is deliberately left to the training consumer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .dataset_io import SampleSet
from .prng import derive_seed, shuffled

MODES = ("easy_to_hard", "hard_to_easy", "mixed")


@dataclass
class ManifestEntry:
    sample_id: str
    stage: int
    complexity_level: int


@dataclass
class CurriculumManifest:
    entries: list[ManifestEntry]
    mode: str
    seed: int
    levels: list[int]
    stage_sizes: list[int]


def _validate_sets(level_sets: list[tuple[int, SampleSet]], balanced: bool) -> None:
    levels = [level for level, _ in level_sets]
    if len(set(levels)) != len(levels):
        raise ValueError(f"duplicate complexity levels: {sorted(levels)}")
    if len(levels) < 2:
        raise ValueError("need at least two complexity levels")
    for level, sset in level_sets:
        if len(sset) == 0:
            raise ValueError(f"level {level} has no samples")
    if balanced:
        sizes = [len(sset) for _, sset in level_sets]
        if max(sizes) - min(sizes) > 1:
            raise ValueError(
                f"stage sizes must differ by at most 1, got {sizes}; "
                "level sets must be balanced for staged modes"
            )


def build_curriculum(
    level_sets: list[tuple[int, SampleSet]],
    mode: str,
    seed: int,
) -> CurriculumManifest:
    """Ordered training plan over per-level sample sets.

    Within-level order uses a per-level derived seed, so hard_to_easy is
    exactly the level-mirror of easy_to_hard for the same seed.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    _validate_sets(level_sets, balanced=mode != "mixed")

    entries: list[ManifestEntry] = []
    if mode == "mixed":
        pairs = [(level, s) for level, sset in level_sets for s in sset]
        order = shuffled(pairs, derive_seed(seed, "curriculum-mixed"))
        stages = len(level_sets)
        base, extra = divmod(len(order), stages)
        position = 0
        for stage in range(stages):
            size = base + (1 if stage < extra else 0)
            for level, sample in order[position:position + size]:
                entries.append(ManifestEntry(sample.id, stage, level))
            position += size
    else:
        ordered = sorted(level_sets, key=lambda pair: pair[0], reverse=mode == "hard_to_easy")
        for stage, (level, sset) in enumerate(ordered):
            for sample in shuffled(sset.items, derive_seed(seed, f"curriculum-level:{level}")):
                entries.append(ManifestEntry(sample.id, stage, level))

    stage_sizes: dict[int, int] = {}
    for entry in entries:
        stage_sizes[entry.stage] = stage_sizes.get(entry.stage, 0) + 1
    return CurriculumManifest(
        entries=entries,
        mode=mode,
        seed=seed,
        levels=sorted(level for level, _ in level_sets),
        stage_sizes=[stage_sizes[s] for s in sorted(stage_sizes)],
    )


def lint_manifest(manifest: CurriculumManifest) -> list[str]:
    """Linear-scan check of the manifest ordering invariants; returns the
    list of violations (empty when clean)."""
    problems = []
    levels = [e.complexity_level for e in manifest.entries]
    stages = [e.stage for e in manifest.entries]
    if manifest.mode == "easy_to_hard":
        if any(a > b for a, b in zip(levels, levels[1:])):
            problems.append("complexity_level decreases in easy_to_hard manifest")
    elif manifest.mode == "hard_to_easy":
        if any(a < b for a, b in zip(levels, levels[1:])):
            problems.append("complexity_level increases in hard_to_easy manifest")
    if any(a > b for a, b in zip(stages, stages[1:])):
        problems.append("stage numbers are not non-decreasing")
    if manifest.stage_sizes and max(manifest.stage_sizes) - min(manifest.stage_sizes) > 1:
        problems.append(f"stage sizes differ by more than 1: {manifest.stage_sizes}")
    counted: dict[int, int] = {}
    for entry in manifest.entries:
        counted[entry.stage] = counted.get(entry.stage, 0) + 1
    if [counted[s] for s in sorted(counted)] != manifest.stage_sizes:
        problems.append("header stage_sizes do not match entries")
    return problems


def write_manifest(manifest: CurriculumManifest, path: str | Path) -> None:
    """Header object on the first line, then one entry object per line."""
    header = {
        "mode": manifest.mode,
        "seed": manifest.seed,
        "levels": manifest.levels,
        "stage_sizes": manifest.stage_sizes,
    }
    lines = [json.dumps(header, ensure_ascii=False)]
    for entry in manifest.entries:
        lines.append(json.dumps({
            "sample_id": entry.sample_id,
            "stage": entry.stage,
            "complexity_level": entry.complexity_level,
        }, ensure_ascii=False))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path: str | Path) -> CurriculumManifest:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    entries = [
        ManifestEntry(
            sample_id=obj["sample_id"],
            stage=obj["stage"],
            complexity_level=obj["complexity_level"],
        )
        for obj in (json.loads(line) for line in lines[1:] if line.strip())
    ]
    return CurriculumManifest(
        entries=entries,
        mode=header["mode"],
        seed=header["seed"],
        levels=header["levels"],
        stage_sizes=header["stage_sizes"],
    )
