import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from ledgercluster import data
from ledgercluster.harness import ComponentCombination, EvaluationReport, ReportRow


def run_cli(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "ledgercluster.cli", *map(str, args)],
        capture_output=True, text=True, env=env,
    )


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("ds") / "poly.csv"
    result = run_cli("synth", "--degrees", "1,2", "--per-degree", "12",
                     "--length", "20", "--noise", "0.01", "--seed", "5",
                     "--out", path)
    assert result.returncode == 0, result.stderr
    return path


class TestSynth:
    def test_writes_dataset_and_manifest(self, tmp_path):
        out = tmp_path / "ds.csv"
        result = run_cli("synth", "--per-degree", "3", "--length", "20",
                         "--seed", "1", "--out", out)
        assert result.returncode == 0, result.stderr
        assert out.exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert str(out) in manifest["outputs"]

    def test_rerun_is_byte_identical(self, tmp_path):
        out = tmp_path / "ds.csv"
        args = ("synth", "--per-degree", "4", "--length", "20", "--seed", "2",
                "--out", out)
        assert run_cli(*args).returncode == 0
        first = out.read_bytes()
        assert run_cli(*args).returncode == 0
        assert out.read_bytes() == first

    def test_env_seed_override(self, tmp_path, monkeypatch):
        import os

        env = dict(os.environ, LEDGERCLUSTER_SEED="99")
        out = tmp_path / "ds.csv"
        result = run_cli("synth", "--per-degree", "3", "--length", "20",
                         "--out", out, env=env)
        assert result.returncode == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seeds"]["seed"] == 99


class TestIngest:
    def _fixture_csv(self, tmp_path, n_accounts=10):
        lines = ["account_id,date,type,amount"]
        for acct in range(n_accounts):
            for m in range(12):
                year, month = 1995 + m // 12, 1 + m % 12
                lines.append(f"{acct},{year}-{month:02d}-05,credit,{100 + acct}.50")
                lines.append(f"{acct},{year}-{month:02d}-20,debit,{40 + m}.25")
        path = tmp_path / "txns.csv"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_ten_account_fixture(self, tmp_path):
        src = self._fixture_csv(tmp_path)
        out = tmp_path / "ds.csv"
        result = run_cli("ingest", "--input", src, "--months", "12", "--out", out)
        assert result.returncode == 0, result.stderr
        ds = data.load_dataset(out)
        assert ds.n == 10 and ds.length == 12

    def test_missing_column_exit_2(self, tmp_path):
        src = tmp_path / "bad.csv"
        src.write_text("account_id,date,amount\n1,1995-01-01,5\n")
        result = run_cli("ingest", "--input", src, "--out", tmp_path / "o.csv")
        assert result.returncode == 2
        assert "type" in result.stderr

    def test_missing_file_exit_2(self, tmp_path):
        result = run_cli("ingest", "--input", tmp_path / "nope.csv",
                         "--out", tmp_path / "o.csv")
        assert result.returncode == 2


class TestTrain:
    def test_fthc_flag_expands_to_preset(self, tiny_dataset, tmp_path):
        result = run_cli("train", "--fthc", "--data", tiny_dataset, "--k", "2",
                         "--seed", "0", "--out", tmp_path,
                         "--pre-iters", "4", "--cls-iters", "4",
                         "--batch-size", "8", "--latent-dim", "4")
        assert result.returncode == 0, result.stderr
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["combo"] == "cnn/none/lr/de"
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert set(metrics) >= {"sc", "dbi", "verdict"}
        assert (tmp_path / "autoencoder.ckpt").exists()
        assert (tmp_path / "assignment.csv").read_text().startswith("id,label")

    def test_incompatible_combo_exit_3_names_rule(self, tiny_dataset, tmp_path):
        result = run_cli("train", "--combo", "fcnn/pca/lr/de", "--data", tiny_dataset,
                         "--out", tmp_path)
        assert result.returncode == 3
        assert "dimensionality reduction" in result.stderr

    def test_unknown_token_exit_3(self, tiny_dataset, tmp_path):
        result = run_cli("train", "--combo", "fcnn/pca/zz/none", "--data", tiny_dataset,
                         "--out", tmp_path)
        assert result.returncode == 3


@pytest.fixture(scope="module")
def grid_dir(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    result = run_cli("grid", "--data", tiny_dataset, "--k", "2", "--trials", "1",
                     "--seed", "0", "--out", out, "--jobs", "1",
                     "--pre-iters", "2", "--cls-iters", "2",
                     "--batch-size", "8", "--latent-dim", "4",
                     "--umap-neighbors", "6")
    assert result.returncode == 0, result.stderr
    return out


class TestGridAndReport:
    def test_grid_row_count(self, grid_dir):
        report = EvaluationReport.from_csv((grid_dir / "report.csv").read_text())
        assert len(report.rows) == 53

    def test_grid_aggregates_json(self, grid_dir):
        aggregates = json.loads((grid_dir / "aggregates.json").read_text())
        assert "invalid_rates" in aggregates
        if "arch" in aggregates:
            assert set(aggregates["arch"]) == {"FCNN", "CNN", "LSTM", "DTC"}

    def test_report_charts_are_wellformed_xml(self, grid_dir, tmp_path):
        out = tmp_path / "charts"
        result = run_cli("report", "--report", grid_dir / "report.csv", "--out", out)
        assert result.returncode == 0, result.stderr
        svgs = sorted(out.glob("*.svg"))
        expected = {f"component_{cls}_{metric}.svg"
                    for cls in ("arch", "dimred", "pretext", "cluster_loss")
                    for metric in ("sc", "dbi")}
        expected |= {"invalid_rates.svg", "fthc_comparison.svg"}
        assert {p.name for p in svgs} == expected
        for svg in svgs:
            ET.fromstring(svg.read_text())

    def test_latent_scatter_from_checkpoint(self, tiny_dataset, grid_dir, tmp_path):
        train_dir = tmp_path / "train"
        result = run_cli("train", "--combo", "fcnn/none/lr/none",
                         "--data", tiny_dataset, "--k", "2", "--seed", "0",
                         "--out", train_dir, "--pre-iters", "3", "--cls-iters", "3",
                         "--batch-size", "8", "--latent-dim", "4")
        assert result.returncode == 0, result.stderr
        out = tmp_path / "charts"
        result = run_cli("report", "--report", grid_dir / "report.csv",
                         "--checkpoint", train_dir / "autoencoder.ckpt",
                         "--data", tiny_dataset, "--out", out)
        assert result.returncode == 0, result.stderr
        scatter = out / "latent_scatter.svg"
        assert scatter.exists()
        ET.fromstring(scatter.read_text())

    def test_malformed_report_exit_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,report\n1,2,3\n")
        result = run_cli("report", "--report", bad, "--out", tmp_path / "o")
        assert result.returncode == 2


class TestNoValidRuns:
    def test_chart_annotates_empty_report(self, tmp_path):
        rows = [ReportRow(ComponentCombination("FCNN", "NONE", "LR", "NONE"),
                          3, 0, 0, None, None, "Diverged")]
        report_path = tmp_path / "report.csv"
        report_path.write_text(EvaluationReport(rows=rows).to_csv())
        out = tmp_path / "charts"
        result = run_cli("report", "--report", report_path, "--out", out)
        assert result.returncode == 0, result.stderr
        text = (out / "component_arch_sc.svg").read_text()
        assert "no valid runs" in text


class TestManifestRerun:
    def test_grid_rerun_byte_identical(self, tiny_dataset, tmp_path):
        out = tmp_path / "g"
        args = ("grid", "--data", tiny_dataset, "--k", "2", "--trials", "1",
                "--seed", "1", "--out", out, "--jobs", "1",
                "--pre-iters", "1", "--cls-iters", "1", "--batch-size", "8",
                "--latent-dim", "4", "--umap-neighbors", "6")
        assert run_cli(*args).returncode == 0
        report_bytes = (out / "report.csv").read_bytes()
        agg_bytes = (out / "aggregates.json").read_bytes()

        from ledgercluster.cli import rerun_from_manifest

        code = rerun_from_manifest(out / "manifest.json")
        assert code == 0
        assert (out / "report.csv").read_bytes() == report_bytes
        assert (out / "aggregates.json").read_bytes() == agg_bytes
