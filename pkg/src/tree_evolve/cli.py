"""Command-line pipelines: evolve, judge, stats, budget, curriculum, convert.

Configuration comes from an optional JSON file plus flag overrides; the
only environment interpolation is the API credential (``${VAR}`` syntax in
the backend api_key field, default ``${TREE_EVOLVE_API_KEY}``). Every
subcommand derives its randomness from the top-level seed via
derive_seed(seed, "cmd-<name>"), so runs are independently reproducible.

Exit codes: 0 success, 1 quality-threshold failure, 2 usage/config/IO
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import budget as budget_mod
from . import curriculum as curriculum_mod
from . import dataset_io, judge as judge_mod
from .evolution import BatchInterrupted, EvolutionConfig, run_batch
from .llm_backend import (
    API_KEY_ENV,
    Backend,
    BackendError,
    OfflineBackend,
    RateLimiter,
    RemoteBackend,
    ResponseCache,
)
from .prng import derive_seed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_QUALITY = 1
EXIT_USAGE = 2

_ENV_REF_RE = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")

DEFAULT_CONFIG = {
    "backend": {
        "kind": "offline",
        "base_url": None,
        "model": None,
        "cache_path": None,
        "rate_limit_per_sec": None,
        "api_key": "${" + API_KEY_ENV + "}",
        "completions_path": "/v1/chat/completions",
        "timeout": 60.0,
        "temperature": 0.7,
        "top_p": 0.9,
        "max_tokens": 2048,
    },
    "evolution": {},
    "seed": 0,
    "parallelism": 1,
    "failure_threshold": 0.05,
    "paths": {"input": None, "output": ".", "reports": "."},
}


class ConfigError(Exception):
    """Run configuration is unusable."""


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    config = DEFAULT_CONFIG
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot load config {path}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        config = _merge(config, raw)
    return config


def _resolve_credential(value: str | None) -> str | None:
    if value is None:
        return None
    match = _ENV_REF_RE.match(value)
    if match is not None:
        return os.environ.get(match.group(1)) or None
    return value


def build_backend(config: dict) -> Backend:
    settings = config["backend"]
    cache = ResponseCache(settings.get("cache_path"))
    limiter = None
    if settings.get("rate_limit_per_sec"):
        limiter = RateLimiter(settings["rate_limit_per_sec"])
    decoding = {
        "temperature": settings.get("temperature", 0.7),
        "top_p": settings.get("top_p", 0.9),
        "max_tokens": settings.get("max_tokens", 2048),
    }
    kind = settings.get("kind", "offline")
    if kind == "offline":
        return OfflineBackend(
            seed=config["seed"], cache=cache, rate_limiter=limiter, **decoding
        )
    if kind == "remote":
        if not settings.get("base_url") or not settings.get("model"):
            raise ConfigError("remote backend requires base_url and model")
        return RemoteBackend(
            base_url=settings["base_url"],
            model=settings["model"],
            api_key=_resolve_credential(settings.get("api_key")),
            completions_path=settings.get("completions_path", "/v1/chat/completions"),
            timeout=settings.get("timeout", 60.0),
            cache=cache,
            rate_limiter=limiter,
            **decoding,
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def _write_records(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")


def _out_dir(config: dict, args) -> Path:
    out = getattr(args, "output", None) or config["paths"].get("output") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _reports_dir(config: dict, args) -> Path:
    out = getattr(args, "reports", None) or config["paths"].get("reports") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _input_path(config: dict, args, attr: str = "input") -> str:
    value = getattr(args, attr, None) or config["paths"].get("input")
    if not value:
        raise ConfigError(f"no {attr} path given (flag or config paths.{attr})")
    return value


def cmd_evolve(config: dict, args) -> int:
    evo_settings = dict(config.get("evolution", {}))
    if args.nodes is not None:
        evo_settings["target_added_nodes"] = args.nodes
    if args.method is not None:
        evo_settings["method"] = {"tree": "tree_instruct", "wizard": "wizard_deepening"}[args.method]
    if args.iterations is not None:
        evo_settings["deepening_iterations"] = args.iterations
    if args.tolerance is not None:
        evo_settings["delta_tolerance"] = args.tolerance
    if args.max_attempts is not None:
        evo_settings["max_attempts"] = args.max_attempts
    if args.regenerate:
        evo_settings["regenerate_responses"] = True
    if args.validate:
        evo_settings["validate_delta"] = True
    if "target_added_nodes" not in evo_settings:
        raise ConfigError("evolve requires --nodes (or evolution.target_added_nodes in config)")
    evo_config = EvolutionConfig(**evo_settings)

    samples = dataset_io.load_dataset(_input_path(config, args))
    backend = build_backend(config)
    out_dir = _out_dir(config, args)
    records_path = out_dir / "records.jsonl"

    try:
        result = run_batch(
            samples,
            evo_config,
            backend,
            parallelism=config["parallelism"],
            seed=derive_seed(config["seed"], "cmd-evolve"),
        )
    except BatchInterrupted as interrupt:
        _write_records(records_path, interrupt.records)
        logger.warning("interrupted; %d partial records flushed", len(interrupt.records))
        return 130

    extension = "jsonl" if args.format == "jsonl" else "json"
    dataset_path = out_dir / f"evolved.{extension}"
    dataset_io.write_dataset(result.evolved, dataset_path, format=args.format)
    _write_records(records_path, result.records)
    _write_json(_reports_dir(config, args) / "evolve_summary.json", result.summary.to_json_dict())

    threshold = config.get("failure_threshold", 0.05)
    failure_fraction = result.summary.failed / result.summary.total if result.summary.total else 0.0
    print(
        f"evolved {result.summary.accepted}/{result.summary.total} samples "
        f"(failed {result.summary.failed}) -> {dataset_path}"
    )
    if failure_fraction > threshold:
        logger.error("failure fraction %.3f exceeds threshold %.3f", failure_fraction, threshold)
        return EXIT_QUALITY
    return EXIT_OK


def _aligned_pairs(set_a, set_b, label_a: str, label_b: str):
    ids_a = set(set_a.ids())
    ids_b = set(set_b.ids())
    offenders = sorted(ids_a ^ ids_b)
    if offenders:
        shown = ", ".join(offenders[:10])
        raise ConfigError(
            f"{label_a} and {label_b} ids do not align; first offenders: {shown}"
        )
    by_id_b = {s.id: s for s in set_b}
    return [(a, by_id_b[a.id]) for a in set_a]


def cmd_judge(config: dict, args) -> int:
    backend = build_backend(config)
    seed = derive_seed(config["seed"], "cmd-judge")
    reports = _reports_dir(config, args)

    if args.task == "consistency":
        originals = dataset_io.load_dataset(_require(args.original, "--original"))
        evolved = dataset_io.load_dataset(_require(args.evolved, "--evolved"))
        pairs = _aligned_pairs(originals, evolved, "original", "evolved")
        verdicts = [
            judge_mod.judge_consistency(
                a.instruction, b.instruction, backend, seed=derive_seed(seed, f"pair:{a.id}")
            )
            for a, b in pairs
        ]
        judge_mod.write_verdicts(reports / "verdicts_consistency.jsonl", verdicts, [a.id for a, _ in pairs])
        mean_score = sum(v.score for v in verdicts) / len(verdicts) if verdicts else 0.0
        _write_json(reports / "judge_consistency.json", {
            "count": len(verdicts),
            "mean_score": mean_score,
        })
        print(f"consistency over {len(verdicts)} pairs: mean score {mean_score:.4f}")
        return EXIT_OK

    if args.task == "pairwise":
        set_a = dataset_io.load_dataset(_require(args.file_a, "--file-a"))
        set_b = dataset_io.load_dataset(_require(args.file_b, "--file-b"))
        pairs = _aligned_pairs(set_a, set_b, "file-a", "file-b")
        verdicts = []
        for a, b in pairs:
            verdicts.append(judge_mod.judge_pairwise(
                a.instruction, a.output, b.output, judge_mod.KIND_PAIRWISE_WIN,
                backend, seed=derive_seed(seed, f"pair:{a.id}"),
            ))
        if args.swap_check:
            for (a, b), verdict in zip(pairs, verdicts):
                mirrored = judge_mod.judge_pairwise(
                    a.instruction, b.output, a.output, judge_mod.KIND_PAIRWISE_WIN,
                    backend, seed=derive_seed(seed, f"pair:{a.id}"),
                )
                winner = {"A": a.output, "B": b.output}.get(verdict.preference)
                mirrored_winner = {"A": b.output, "B": a.output}.get(mirrored.preference)
                if winner != mirrored_winner:
                    logger.error("swap check failed for pair %s", a.id)
                    return EXIT_QUALITY
            print(f"swap check passed for {len(pairs)} pairs")
        judge_mod.write_verdicts(reports / "verdicts_pairwise.jsonl", verdicts, [a.id for a, _ in pairs])
        report = judge_mod.compute_win_rate(verdicts)
        _write_json(reports / "judge_pairwise.json", report.to_json_dict())
        print(report.to_table())
        return EXIT_OK

    # winrate: aggregate an existing verdict file.
    verdicts, pair_ids = judge_mod.read_verdicts(_require(args.verdicts, "--verdicts"))
    labels = None
    if args.labels:
        label_map = json.loads(Path(args.labels).read_text(encoding="utf-8"))
        labels = [label_map.get(pair_id, "unlabeled") for pair_id in pair_ids]
    report = judge_mod.compute_win_rate(verdicts, labels)
    _write_json(reports / "winrate.json", report.to_json_dict())
    print(report.to_table())
    return EXIT_OK


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"{flag} is required for this task")
    return value


def cmd_stats(config: dict, args) -> int:
    samples = dataset_io.load_dataset(_input_path(config, args))
    stats = budget_mod.dataset_tokens(samples)
    _write_json(_reports_dir(config, args) / "token_stats.json", stats.to_json_dict())
    print(f"{len(samples)} samples, {stats.total} tokens, mean {stats.mean:.2f}")
    return EXIT_OK


def cmd_budget(config: dict, args) -> int:
    pool = dataset_io.load_dataset(_require(args.pool, "--pool"))
    match = budget_mod.match_budget(
        pool,
        target_tokens=args.target,
        tolerance_fraction=args.tolerance,
        seed=derive_seed(config["seed"], "cmd-budget"),
    )
    out_dir = _out_dir(config, args)
    extension = "jsonl" if args.format == "jsonl" else "json"
    subset_path = out_dir / f"budget_subset.{extension}"
    dataset_io.write_dataset(match.selected, subset_path, format=args.format)
    _write_json(_reports_dir(config, args) / "budget_report.json", match.to_json_dict())
    print(
        f"selected {len(match.selected)} samples, {match.total_tokens} tokens "
        f"vs target {match.target_tokens} (deviation {match.deviation_fraction:.4f})"
    )
    if not match.within_tolerance:
        if match.undershoot:
            logger.error("pool undershoots the target budget")
        return EXIT_QUALITY
    return EXIT_OK


def cmd_curriculum(config: dict, args) -> int:
    level_sets = []
    for spec_item in args.set:
        level_text, _, path = spec_item.partition("=")
        if not path:
            raise ConfigError(f"--set expects LEVEL=PATH, got {spec_item!r}")
        try:
            level = int(level_text)
        except ValueError as err:
            raise ConfigError(f"--set level must be an integer, got {level_text!r}") from err
        level_sets.append((level, dataset_io.load_dataset(path)))
    manifest = curriculum_mod.build_curriculum(
        level_sets, mode=args.mode, seed=derive_seed(config["seed"], "cmd-curriculum")
    )
    problems = curriculum_mod.lint_manifest(manifest)
    manifest_path = _out_dir(config, args) / "curriculum.jsonl"
    curriculum_mod.write_manifest(manifest, manifest_path)
    print(
        f"{manifest.mode} manifest: {len(manifest.entries)} entries, "
        f"stages {manifest.stage_sizes} -> {manifest_path}"
    )
    if problems:
        for problem in problems:
            logger.error("manifest lint: %s", problem)
        return EXIT_QUALITY
    return EXIT_OK


def _conversations_to_samples(conversations) -> dataset_io.SampleSet:
    items = []
    for conv in conversations:
        instruction = next((t.content for t in conv.turns if t.role == "user"), None)
        if instruction is None:
            continue
        output = next((t.content for t in conv.turns if t.role == "assistant"), "")
        items.append(dataset_io.InstructionSample(
            id=conv.id, instruction=instruction, output=output, source="sharegpt",
        ))
    return dataset_io.SampleSet(items, provenance="converted:sharegpt")


def _samples_to_sharegpt(samples) -> list[dict]:
    out = []
    for sample in samples:
        value = sample.instruction if not sample.input else sample.instruction + "\n" + sample.input
        out.append({
            "id": sample.id,
            "conversations": [
                {"from": "human", "value": value},
                {"from": "gpt", "value": sample.output},
            ],
        })
    return out


def cmd_convert(config: dict, args) -> int:
    source, target = args.source_format, args.target_format
    output = Path(args.output_file)
    if source == "sharegpt":
        samples = _conversations_to_samples(dataset_io.load_sharegpt(args.input_file))
    else:
        samples = dataset_io.load_dataset(args.input_file, format=source)
    if target == "sharegpt":
        payload = json.dumps(_samples_to_sharegpt(samples), ensure_ascii=False, indent=2)
        output.write_text(payload + "\n", encoding="utf-8")
    else:
        dataset_io.write_dataset(samples, output, format=target)
    print(f"converted {len(samples)} samples: {source} -> {target} ({output})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tree-evolve",
        description="Complexity evolution, judging, and scheduling for instruction datasets.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    parser.add_argument("--parallelism", type=int, help="worker pool size (overrides config)")
    parser.add_argument("--backend", choices=["offline", "remote"], help="backend kind override")
    parser.add_argument("--cache", help="response cache path override")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    evolve = commands.add_parser("evolve", help="complexify a dataset")
    evolve.add_argument("--input", help="input dataset (alpaca .json or .jsonl)")
    evolve.add_argument("--output", help="output directory")
    evolve.add_argument("--reports", help="reports directory")
    evolve.add_argument("--nodes", type=int, help="target added nodes")
    evolve.add_argument("--method", choices=["tree", "wizard"], help="evolution method")
    evolve.add_argument("--iterations", type=int, help="deepening iterations (wizard)")
    evolve.add_argument("--tolerance", type=int, help="validation delta tolerance")
    evolve.add_argument("--max-attempts", type=int, help="attempts per sample")
    evolve.add_argument("--regenerate", action="store_true", help="regenerate responses")
    evolve.add_argument("--validate", action="store_true", help="validate node deltas")
    evolve.add_argument("--format", choices=["alpaca_json", "jsonl"], default="jsonl")
    evolve.set_defaults(func=cmd_evolve)

    judging = commands.add_parser("judge", help="LLM-as-judge evaluations")
    judging.add_argument("--task", choices=["consistency", "pairwise", "winrate"], required=True)
    judging.add_argument("--original", help="original dataset (consistency)")
    judging.add_argument("--evolved", help="evolved dataset (consistency)")
    judging.add_argument("--file-a", help="candidate dataset A (pairwise)")
    judging.add_argument("--file-b", help="candidate dataset B (pairwise)")
    judging.add_argument("--swap-check", action="store_true",
                         help="re-run pairwise mirrored and check label symmetry")
    judging.add_argument("--verdicts", help="verdict JSONL to aggregate (winrate)")
    judging.add_argument("--labels", help="JSON map pair_id -> subset label (winrate)")
    judging.add_argument("--reports", help="reports directory")
    judging.set_defaults(func=cmd_judge)

    stats = commands.add_parser("stats", help="token statistics")
    stats.add_argument("--input", help="dataset path")
    stats.add_argument("--reports", help="reports directory")
    stats.set_defaults(func=cmd_stats)

    budget = commands.add_parser("budget", help="match a token budget")
    budget.add_argument("--pool", help="pool dataset path")
    budget.add_argument("--target", type=int, required=True, help="target token total")
    budget.add_argument("--tolerance", type=float, default=0.05, help="tolerance fraction")
    budget.add_argument("--output", help="output directory")
    budget.add_argument("--reports", help="reports directory")
    budget.add_argument("--format", choices=["alpaca_json", "jsonl"], default="jsonl")
    budget.set_defaults(func=cmd_budget)

    curriculum = commands.add_parser("curriculum", help="build a training manifest")
    curriculum.add_argument("--set", action="append", required=True, metavar="LEVEL=PATH",
                            help="complexity level and dataset path (repeatable)")
    curriculum.add_argument("--mode", choices=list(curriculum_mod.MODES), default="easy_to_hard")
    curriculum.add_argument("--output", help="output directory")
    curriculum.set_defaults(func=cmd_curriculum)

    convert = commands.add_parser("convert", help="convert between dataset formats")
    convert.add_argument("input_file")
    convert.add_argument("output_file")
    convert.add_argument("--from", dest="source_format", required=True,
                         choices=["alpaca_json", "jsonl", "sharegpt"])
    convert.add_argument("--to", dest="target_format", required=True,
                         choices=["alpaca_json", "jsonl", "sharegpt"])
    convert.set_defaults(func=cmd_convert)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.parallelism is not None:
            config["parallelism"] = args.parallelism
        if args.backend is not None:
            config["backend"]["kind"] = args.backend
        if args.cache is not None:
            config["backend"]["cache_path"] = args.cache
        if config["parallelism"] < 1:
            raise ConfigError("parallelism must be >= 1")
        return args.func(config, args)
    except (ConfigError, dataset_io.DatasetError, ValueError) as err:
        logger.error("%s", err)
        return EXIT_USAGE
    except BackendError as err:
        logger.error("backend failure: %s", err)
        return EXIT_USAGE
    except OSError as err:
        logger.error("I/O failure: %s", err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
