"""End-to-end command-line tests on the fixture corpora."""
from __future__ import annotations

import shutil

import numpy as np
import pytest

from sparsepool.cli import main


def toy_args(fixtures_dir, *extra):
    return [
        "--dataset", "TOY24",
        "--data-dir", str(fixtures_dir / "TOY24"),
        "--hidden", "8",
        "--lr", "0.01",
        "--epochs", "2",
        "--batch-size", "8",
        "--seed", "1",
        *extra,
    ]


class TestTrain:
    def test_smoke_writes_model_and_manifest(self, fixtures_dir, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", *toy_args(fixtures_dir), "--out", str(out)])
        assert code == 0
        assert (out / "model.params").exists()
        assert (out / "metrics.csv").exists()
        manifest = (out / "manifest.txt").read_text()
        # every config default appears explicitly
        for key in ("config.hidden_dim", "config.lr", "config.epochs", "config.pool_ratio",
                    "config.batch_size", "config.seed", "config.readout_position",
                    "config.max_degree", "config.folds", "config.stratified"):
            assert key in manifest
        assert "checksum.TOY24_A.txt" in manifest
        assert "accuracy" in capsys.readouterr().out

    def test_missing_edge_file_exits_2(self, fixtures_dir, tmp_path, capsys):
        broken = tmp_path / "broken"
        broken.mkdir()
        for name in ("TOY24_graph_indicator.txt", "TOY24_graph_labels.txt"):
            shutil.copy(fixtures_dir / "TOY24" / name, broken / name)
        code = main(["train", "--dataset", "TOY24", "--data-dir", str(broken),
                     "--hidden", "4", "--lr", "0.01", "--epochs", "1"])
        assert code == 2
        assert "TOY24_A.txt" in capsys.readouterr().err

    def test_unknown_dataset_without_flags_exits_2(self, tmp_path, capsys):
        code = main(["train", "--dataset", "NOPE", "--data-dir", str(tmp_path)])
        assert code == 2
        assert "NOPE" in capsys.readouterr().err

    def test_numeric_blowup_exits_3(self, fixtures_dir, tmp_path, capsys):
        with np.errstate(over="ignore", invalid="ignore"):
            code = main(["train", "--dataset", "TOY24",
                         "--data-dir", str(fixtures_dir / "TOY24"),
                         "--hidden", "8", "--lr", "1e80", "--epochs", "3",
                         "--out", str(tmp_path / "x")])
        assert code == 3
        assert "non-finite" in capsys.readouterr().err


class TestCV:
    def test_show_defaults_lists_benchmark_table(self, capsys):
        assert main(["cv", "--dataset", "PROTEINS", "--show-defaults"]) == 0
        out = capsys.readouterr().out
        assert "PROTEINS" in out and "0.005" in out and "40" in out
        assert "ENZYMES" in out and "0.0005" in out and "100" in out
        assert "128" in out and "64" in out

    def test_cv_writes_metrics_report_manifest(self, fixtures_dir, tmp_path):
        out = tmp_path / "cv"
        code = main(["cv", *toy_args(fixtures_dir), "--out", str(out)])
        assert code == 0
        metrics = (out / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "fold,accuracy,epochs"
        assert len(metrics) == 11
        assert (out / "report.txt").exists()
        assert (out / "manifest.txt").exists()

    def test_byte_identical_metrics_across_runs(self, fixtures_dir, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["cv", *toy_args(fixtures_dir), "--out", str(out_a)]) == 0
        assert main(["cv", *toy_args(fixtures_dir), "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()

    def test_seed_override_changes_manifest_not_defaults(self, fixtures_dir, tmp_path):
        out = tmp_path / "cv2"
        assert main(["cv", *toy_args(fixtures_dir), "--seed", "9", "--out", str(out)]) == 0
        manifest = (out / "manifest.txt").read_text()
        assert "config.seed = 9" in manifest
        assert "config.pool_ratio = 0.8" in manifest


class TestBenchMem:
    def test_csv_and_slopes(self, tmp_path, capsys):
        out = tmp_path / "mem"
        code = main(["bench-mem", "--sizes", "500,1000,2000", "--out", str(out)])
        assert code == 0
        lines = (out / "membench.csv").read_text().strip().splitlines()
        assert lines[0] == "n,sparse_bytes,dense_bytes,dense_feasible"
        assert len(lines) == 4
        console = capsys.readouterr().out
        assert "slope sparse" in console and "slope dense" in console

    def test_budget_flag_parses_units(self, tmp_path):
        out = tmp_path / "mem2"
        code = main(["bench-mem", "--sizes", "1000,16000", "--budget", "1GiB",
                     "--out", str(out)])
        assert code == 0
        lines = (out / "membench.csv").read_text().strip().splitlines()
        assert lines[1].endswith("true")
        assert lines[2].endswith("false")

    def test_bad_sizes_exit_2(self, capsys):
        assert main(["bench-mem", "--sizes", "2000,1000"]) == 2


class TestExportSummaries:
    @pytest.fixture
    def trained(self, fixtures_dir, tmp_path):
        out = tmp_path / "train"
        assert main(["train", *toy_args(fixtures_dir), "--out", str(out)]) == 0
        return out / "model.params"

    def test_summary_rows_match_fold_size(self, fixtures_dir, tmp_path, trained):
        out = tmp_path / "exp"
        code = main(["export-summaries", *toy_args(fixtures_dir),
                     "--model", str(trained), "--fold", "0", "--out", str(out)])
        assert code == 0
        rows = (out / "summaries.csv").read_text().strip().splitlines()
        # 24 graphs, 10 folds: fold 0 holds 4 test graphs (2 + 2 remainder spread)
        parts = rows[0].split(",")
        assert len(parts) == 2 + 2 * 8  # id, label, then the 2F' summary
        fold_sizes = {len(rows)}
        assert fold_sizes <= {2, 3, 4}

    def test_post_head_exports_logits(self, fixtures_dir, tmp_path, trained):
        out = tmp_path / "logit"
        code = main(["export-summaries", *toy_args(fixtures_dir), "--model", str(trained),
                     "--post-head", "--out", str(out)])
        assert code == 0
        first = (out / "logits.csv").read_text().strip().splitlines()[0]
        assert len(first.split(",")) == 2 + 2  # id, label, C=2 logits

    def test_whole_dataset_split(self, fixtures_dir, tmp_path, trained):
        out = tmp_path / "all"
        code = main(["export-summaries", *toy_args(fixtures_dir), "--model", str(trained),
                     "--split", "all", "--out", str(out)])
        assert code == 0
        rows = (out / "summaries.csv").read_text().strip().splitlines()
        assert len(rows) == 24
        ids = sorted(int(r.split(",")[0]) for r in rows)
        assert ids == list(range(24))

    def test_bad_fold_exits_2(self, fixtures_dir, tmp_path, trained, capsys):
        code = main(["export-summaries", *toy_args(fixtures_dir), "--model", str(trained),
                     "--fold", "99", "--out", str(tmp_path / "x")])
        assert code == 2


class TestParser:
    def test_help_lists_flags(self, capsys):
        assert main(["cv", "--help"]) == 0
        text = capsys.readouterr().out
        for flag in ("--dataset", "--data-dir", "--hidden", "--ratio", "--lr", "--epochs",
                     "--batch-size", "--seed", "--jobs", "--readout-position", "--out"):
            assert flag in text
        assert main(["bench-mem", "--help"]) == 0
        text = capsys.readouterr().out
        assert "--sizes" in text and "--budget" in text

    def test_unknown_command_exits_2(self):
        assert main(["frobnicate"]) == 2
