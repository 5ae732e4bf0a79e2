import csv
import json

import numpy as np
import yaml
from click.testing import CliRunner

from fedstain.cli import main


def tiny_config(tmp_path, n_samples=16, extra=None):
    raw = {
        "fed": {
            "n_round": 1,
            "n_epochs": 1,
            "batch_size": 8,
            "num_clients_per_domain": 1,
            "master_seed": 5,
        },
        "augment": {"augmix_chains": 2, "augmix_depth_max": 2},
        "model": {"input_hw": 16, "conv_channels": [4, 6, 8]},
        "data": {
            "generator": {
                "n_samples": n_samples,
                "image_hw": 16,
                "domains": [
                    {"name": "a", "mean": 0.35, "std": 0.06, "skewness": 0.4,
                     "kurtosis": 3.3, "texture_seed": 1},
                    {"name": "b", "mean": 0.65, "std": 0.08, "skewness": -0.5,
                     "kurtosis": 3.6, "texture_seed": 2},
                ],
            }
        },
        "ablation": {"kinds": ["mean_std", "skewness_kurtosis"]},
        "seeds": [0],
    }
    if extra:
        for key, value in extra.items():
            raw.setdefault(key, {}).update(value)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run_cli(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


class TestBuildDataset:
    def test_builds_manifest_and_prints_stats(self, tmp_path):
        config = tiny_config(tmp_path)
        out = tmp_path / "out"
        result = run_cli(["--config", str(config), "--out", str(out), "build-dataset"])
        assert result.exit_code == 0
        assert (out / "dataset" / "manifest.txt").exists()
        assert "skew=" in result.output

    def test_same_seed_identical_bytes(self, tmp_path):
        config = tiny_config(tmp_path)
        outs = []
        for sub in ("o1", "o2"):
            out = tmp_path / sub
            assert run_cli(["--config", str(config), "--out", str(out), "build-dataset"]).exit_code == 0
            blobs = {
                p.relative_to(out): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file()
            }
            outs.append(blobs)
        assert outs[0] == outs[1]

    def test_infeasible_spec_exits_2(self, tmp_path):
        raw = yaml.safe_load(tiny_config(tmp_path).read_text())
        raw["data"]["generator"]["domains"][0]["kurtosis"] = 1.0  # violates K >= S^2+1
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump(raw))
        result = CliRunner().invoke(main, ["--config", str(bad), "--out", str(tmp_path / "x"), "build-dataset"])
        assert result.exit_code == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("fed:\n  warp_factor: 9\n")
        result = CliRunner().invoke(main, ["--config", str(bad), "build-dataset"])
        assert result.exit_code == 2


class TestAnalyzeStains:
    def test_diagnostic_bundles(self, tmp_path):
        config = tiny_config(tmp_path, n_samples=32)
        out = tmp_path / "out"
        run_cli(["--config", str(config), "--out", str(out), "build-dataset"])
        result = run_cli(
            ["--config", str(config), "--out", str(out / "diag"),
             "analyze-stains", str(out / "dataset" / "manifest.txt")]
        )
        assert result.exit_code == 0
        for dom in ("a", "b"):
            for c in range(3):
                assert (out / "diag" / f"hist_{dom}_ch{c}.csv").exists()
                assert (out / "diag" / f"qq_{dom}_ch{c}.csv").exists()
        with open(out / "diag" / "stain_summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        skew_a = float(next(r for r in rows if r["domain"] == "a" and r["channel"] == "0")["skewness"])
        assert abs(skew_a - 0.4) < 0.1

    def test_missing_manifest_exits_2(self, tmp_path):
        config = tiny_config(tmp_path)
        result = CliRunner().invoke(
            main, ["--config", str(config), "--out", str(tmp_path / "d"), "analyze-stains"]
        )
        assert result.exit_code == 2


class TestTrain:
    def test_train_writes_reports_and_checkpoints(self, tmp_path):
        config = tiny_config(tmp_path)
        out = tmp_path / "run"
        result = run_cli(["--config", str(config), "--out", str(out), "train"])
        assert result.exit_code == 0
        with open(out / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["held_out_domain"] for r in rows} == {"a", "b"}
        report = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= report["macro_average"] <= 1.0
        assert (out / "checkpoint_a_seed0.ckpt").exists()
        assert (out / "train_log_a_seed0.csv").exists()
        with open(out / "train_log_a_seed0.csv") as fh:
            log_rows = list(csv.DictReader(fh))
        assert {"round", "client", "epoch", "step", "cls", "ra", "js", "total", "lr"} <= set(log_rows[0])

    def test_mode_flag_switches_to_baseline(self, tmp_path):
        config = tiny_config(tmp_path)
        out = tmp_path / "base"
        result = run_cli(
            ["--config", str(config), "--out", str(out), "--mode", "fedavg_baseline", "train"]
        )
        assert result.exit_code == 0
        report = json.loads((out / "metrics.json").read_text())
        assert report["mode"] == "fedavg_baseline"
        with open(out / "train_log_a_seed0.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(float(r["ra"]) == 0.0 and float(r["js"]) == 0.0 for r in rows)

    def test_three_seed_report_rows(self, tmp_path):
        config = tiny_config(tmp_path)
        raw = yaml.safe_load(config.read_text())
        raw["seeds"] = [0, 1, 2]
        config.write_text(yaml.safe_dump(raw))
        out = tmp_path / "seeds"
        result = run_cli(["--config", str(config), "--out", str(out), "train"])
        assert result.exit_code == 0
        with open(out / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6  # 2 domains x 3 seeds
        report = json.loads((out / "metrics.json").read_text())
        assert len(report["rows"]) == 6


class TestAblateAndExport:
    def test_ablation_csv_shape(self, tmp_path):
        config = tiny_config(tmp_path)
        out = tmp_path / "abl"
        result = run_cli(["--config", str(config), "--out", str(out), "ablate-stats"])
        assert result.exit_code == 0
        with open(out / "ablation.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:4] == ["stat_kind", "a", "b", "avg"]
        assert [r[0] for r in rows[1:]] == ["mean_std", "skewness_kurtosis"]

    def test_export_embeddings(self, tmp_path):
        config = tiny_config(tmp_path)
        out = tmp_path / "run"
        run_cli(["--config", str(config), "--out", str(out), "build-dataset"])
        run_cli(["--config", str(config), "--out", str(out), "train"])
        result = run_cli(
            ["--config", str(config), "--out", str(out),
             "export-embeddings", str(out / "checkpoint_a_seed0.ckpt"),
             str(out / "dataset" / "manifest.txt")]
        )
        assert result.exit_code == 0
        with open(out / "embeddings.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["domain", "label"] + [f"e{i}" for i in range(8)]
        assert len(rows) == 1 + 32  # 2 domains x 16 samples
        # identical inputs give identical rows
        again = run_cli(
            ["--config", str(config), "--out", str(out),
             "export-embeddings", str(out / "checkpoint_a_seed0.ckpt"),
             str(out / "dataset" / "manifest.txt")]
        )
        assert again.exit_code == 0

    def test_layout_mismatch_exits_2(self, tmp_path):
        config = tiny_config(tmp_path)
        out = tmp_path / "run"
        run_cli(["--config", str(config), "--out", str(out), "build-dataset"])
        run_cli(["--config", str(config), "--out", str(out), "train"])
        raw = yaml.safe_load(config.read_text())
        raw["model"]["conv_channels"] = [4, 6, 10]
        other = tmp_path / "other.yaml"
        other.write_text(yaml.safe_dump(raw))
        result = CliRunner().invoke(
            main,
            ["--config", str(other), "--out", str(out),
             "export-embeddings", str(out / "checkpoint_a_seed0.ckpt"),
             str(out / "dataset" / "manifest.txt")],
        )
        assert result.exit_code == 2
