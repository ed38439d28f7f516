"""CLI pipelines, exit codes, and file outputs."""

from __future__ import annotations

import json

import pytest

from tree_evolve.cli import main
from tree_evolve.dataset_io import load_jsonl, write_dataset
from tree_evolve.curriculum import read_manifest, lint_manifest

from conftest import make_fixture_samples


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "input.jsonl"
    write_dataset(make_fixture_samples(10), path, format="jsonl")
    return path


def _evolve_args(dataset, out, rep, *extra):
    return [
        "--seed", "1", "evolve", "--input", str(dataset),
        "--output", str(out), "--reports", str(rep), *extra,
    ]


class TestEvolveCommand:
    def test_offline_tree_run_exits_zero(self, tmp_path, dataset, capsys):
        out, rep = tmp_path / "out", tmp_path / "rep"
        code = main(_evolve_args(dataset, out, rep, "--nodes", "10", "--method", "tree",
                                 "--validate", "--tolerance", "0"))
        assert code == 0
        records = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
        assert len(records) == 10
        assert all(r["status"] == "accepted" for r in records)
        assert all(r["measured_delta"] == 10 for r in records)
        evolved = load_jsonl(out / "evolved.jsonl")
        assert len(evolved) == 10
        summary = json.loads((rep / "evolve_summary.json").read_text())
        assert summary["accepted"] == 10
        assert summary["mean_measured_delta"] == 10.0

    def test_zero_nodes_rejected(self, tmp_path, dataset):
        code = main(_evolve_args(dataset, tmp_path / "o", tmp_path / "r", "--nodes", "0"))
        assert code == 2

    def test_missing_input_is_usage_error(self, tmp_path):
        code = main(_evolve_args(tmp_path / "absent.jsonl", tmp_path / "o", tmp_path / "r",
                                 "--nodes", "3"))
        assert code == 2

    def test_wizard_method_with_iterations(self, tmp_path, dataset):
        out, rep = tmp_path / "out", tmp_path / "rep"
        code = main(_evolve_args(dataset, out, rep, "--nodes", "3", "--method", "wizard",
                                 "--iterations", "3"))
        assert code == 0
        evolved = load_jsonl(out / "evolved.jsonl")
        assert all("Justify each step" in s.instruction for s in evolved)

    def test_threshold_breach_exits_one(self, tmp_path, dataset):
        # Wizard deepening overshoots target 3 tolerance 0 on validation, so
        # every sample fails and the failure fraction exceeds the threshold.
        out, rep = tmp_path / "out", tmp_path / "rep"
        code = main(_evolve_args(dataset, out, rep, "--nodes", "4", "--method", "wizard",
                                 "--iterations", "1", "--validate", "--tolerance", "1"))
        assert code == 1
        summary = json.loads((rep / "evolve_summary.json").read_text())
        assert summary["failed"] == summary["total"]

    def test_alpaca_output_format(self, tmp_path, dataset):
        out = tmp_path / "out"
        code = main(_evolve_args(dataset, out, tmp_path / "rep", "--nodes", "3",
                                 "--format", "alpaca_json"))
        assert code == 0
        data = json.loads((out / "evolved.json").read_text())
        assert isinstance(data, list) and len(data) == 10


class TestJudgeCommand:
    def test_consistency_identical_pairs(self, tmp_path, dataset, capsys):
        rep = tmp_path / "rep"
        code = main([
            "--seed", "1", "judge", "--task", "consistency",
            "--original", str(dataset), "--evolved", str(dataset),
            "--reports", str(rep),
        ])
        assert code == 0
        report = json.loads((rep / "judge_consistency.json").read_text())
        assert report["mean_score"] == 1.0
        lines = (rep / "verdicts_consistency.jsonl").read_text().splitlines()
        assert len(lines) == 10

    def test_unmatched_ids_exit_two(self, tmp_path, dataset):
        other = tmp_path / "other.jsonl"
        write_dataset(make_fixture_samples(10, prefix="zz"), other, format="jsonl")
        code = main([
            "judge", "--task", "consistency",
            "--original", str(dataset), "--evolved", str(other),
            "--reports", str(tmp_path / "rep"),
        ])
        assert code == 2

    def test_pairwise_with_swap_check(self, tmp_path, capsys):
        a_path, b_path = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        samples_a = make_fixture_samples(6)
        write_dataset(samples_a, a_path, format="jsonl")
        # Same ids, much shorter outputs: candidate A should win every pair.
        from tree_evolve.dataset_io import InstructionSample, SampleSet
        b_items = [
            InstructionSample(id=s.id, instruction=s.instruction, output="ok")
            for s in samples_a
        ]
        write_dataset(SampleSet(b_items), b_path, format="jsonl")
        rep = tmp_path / "rep"
        code = main([
            "--seed", "1", "judge", "--task", "pairwise",
            "--file-a", str(a_path), "--file-b", str(b_path),
            "--swap-check", "--reports", str(rep),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "swap check passed" in out
        report = json.loads((rep / "judge_pairwise.json").read_text())
        assert report["overall"]["wins"] == 6

    def test_winrate_fixture(self, tmp_path, capsys):
        verdicts_path = tmp_path / "verdicts.jsonl"
        rows = []
        for i, pref in enumerate(["A", "A", "A", "B", "tie", "tie"]):
            rows.append(json.dumps({
                "pair_id": f"p{i}", "kind": "pairwise_win", "judge_model": "offline",
                "score": None, "preference": pref,
                "order_ab": "TIE" if pref == "tie" else pref,
                "order_ba": {"A": "B", "B": "A", "tie": "TIE"}[pref],
            }))
        verdicts_path.write_text("".join(r + "\n" for r in rows))
        rep = tmp_path / "rep"
        code = main(["judge", "--task", "winrate", "--verdicts", str(verdicts_path),
                     "--reports", str(rep)])
        assert code == 0
        report = json.loads((rep / "winrate.json").read_text())
        assert report["overall"]["win_rate"] == pytest.approx(2 / 3)
        assert "66.67%" in capsys.readouterr().out


class TestStatsCommand:
    def test_stats_on_empty_dataset(self, tmp_path, capsys):
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        rep = tmp_path / "rep"
        code = main(["stats", "--input", str(empty), "--reports", str(rep)])
        assert code == 0
        stats = json.loads((rep / "token_stats.json").read_text())
        assert stats["total"] == 0

    def test_stats_reports_totals(self, tmp_path, dataset):
        rep = tmp_path / "rep"
        code = main(["stats", "--input", str(dataset), "--reports", str(rep)])
        assert code == 0
        stats = json.loads((rep / "token_stats.json").read_text())
        assert stats["total"] > 0
        assert len(stats["per_sample"]) == 10


class TestBudgetCommand:
    def test_reachable_target(self, tmp_path, dataset):
        out, rep = tmp_path / "out", tmp_path / "rep"
        code = main(["--seed", "3", "budget", "--pool", str(dataset),
                     "--target", "60", "--tolerance", "0.5",
                     "--output", str(out), "--reports", str(rep)])
        assert code == 0
        report = json.loads((rep / "budget_report.json").read_text())
        assert report["within_tolerance"] is True
        subset = load_jsonl(out / "budget_subset.jsonl")
        assert len(subset) >= 1

    def test_unreachable_target_flags_undershoot(self, tmp_path, dataset):
        out, rep = tmp_path / "out", tmp_path / "rep"
        code = main(["budget", "--pool", str(dataset), "--target", "100000",
                     "--tolerance", "0.01", "--output", str(out), "--reports", str(rep)])
        assert code == 1
        report = json.loads((rep / "budget_report.json").read_text())
        assert report["undershoot"] is True


class TestCurriculumCommand:
    def test_three_level_manifest(self, tmp_path, dataset):
        paths = {}
        for level in (3, 6, 10):
            path = tmp_path / f"level{level}.jsonl"
            samples = make_fixture_samples(20, prefix=f"v{level}-")
            write_dataset(samples, path, format="jsonl")
            paths[level] = path
        out = tmp_path / "out"
        code = main([
            "--seed", "2", "curriculum",
            "--set", f"3={paths[3]}", "--set", f"6={paths[6]}", "--set", f"10={paths[10]}",
            "--mode", "easy_to_hard", "--output", str(out),
        ])
        assert code == 0
        manifest = read_manifest(out / "curriculum.jsonl")
        assert lint_manifest(manifest) == []
        assert manifest.stage_sizes == [20, 20, 20]

    def test_malformed_set_spec(self, tmp_path):
        assert main(["curriculum", "--set", "nonsense"]) == 2


class TestConvertCommand:
    def test_alpaca_jsonl_round_trip(self, tmp_path):
        src = tmp_path / "src.json"
        write_dataset(make_fixture_samples(4), src, format="alpaca_json")
        mid = tmp_path / "mid.jsonl"
        back = tmp_path / "back.json"
        assert main(["convert", str(src), str(mid), "--from", "alpaca_json", "--to", "jsonl"]) == 0
        assert main(["convert", str(mid), str(back), "--from", "jsonl", "--to", "alpaca_json"]) == 0
        assert json.loads(src.read_text()) == json.loads(back.read_text())

    def test_sharegpt_to_jsonl(self, tmp_path):
        src = tmp_path / "conv.json"
        src.write_text(json.dumps([{
            "id": "c1",
            "conversations": [
                {"from": "human", "value": "Explain gravity to a child"},
                {"from": "gpt", "value": "Gravity pulls things down."},
            ],
        }]))
        dst = tmp_path / "flat.jsonl"
        assert main(["convert", str(src), str(dst), "--from", "sharegpt", "--to", "jsonl"]) == 0
        samples = load_jsonl(dst)
        assert samples.items[0].instruction == "Explain gravity to a child"
        assert samples.items[0].output == "Gravity pulls things down."

    def test_jsonl_to_sharegpt(self, tmp_path):
        src = tmp_path / "src.jsonl"
        write_dataset(make_fixture_samples(3), src, format="jsonl")
        dst = tmp_path / "conv.json"
        assert main(["convert", str(src), str(dst), "--from", "jsonl", "--to", "sharegpt"]) == 0
        data = json.loads(dst.read_text())
        assert len(data) == 3
        assert data[0]["conversations"][0]["from"] == "human"


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path, dataset):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({
            "seed": 9,
            "parallelism": 2,
            "evolution": {"target_added_nodes": 3},
            "paths": {"output": str(tmp_path / "cfg_out"), "reports": str(tmp_path / "cfg_rep")},
        }))
        code = main(["--config", str(config_path), "evolve", "--input", str(dataset)])
        assert code == 0
        assert (tmp_path / "cfg_out" / "evolved.jsonl").exists()
        evolved = load_jsonl(tmp_path / "cfg_out" / "evolved.jsonl")
        assert all(s.complexity_level == 3 for s in evolved)

    def test_bad_config_exits_two(self, tmp_path, dataset):
        config_path = tmp_path / "config.json"
        config_path.write_text("{not json")
        assert main(["--config", str(config_path), "evolve", "--input", str(dataset),
                     "--nodes", "3"]) == 2

    def test_remote_without_base_url_rejected(self, tmp_path, dataset):
        code = main(["--backend", "remote", "evolve", "--input", str(dataset), "--nodes", "3",
                     "--output", str(tmp_path / "o"), "--reports", str(tmp_path / "r")])
        assert code == 2
