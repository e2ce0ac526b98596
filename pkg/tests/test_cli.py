"""End-to-end command-line runs through a real subprocess."""

import json
import os
import subprocess
import sys

import pytest


def run_cli(*args, env_extra=None, check=True):
    env = {k: v for k, v in os.environ.items() if k != "LMPRIOR_OUT"}
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run(
        [sys.executable, "-m", "lmprior", *map(str, args)],
        capture_output=True, text=True, env=env,
    )
    if check:
        assert proc.returncode == 0, f"stderr: {proc.stderr}\nstdout: {proc.stdout}"
    return proc


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic data, ingest output, a graph, and an MF checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run_cli(
        "synth", "--users", 50, "--items", 40, "--clusters", 4, "--dim", 6,
        "--cold-frac", 0.1, "--threshold", 3, "--seed", 5, "--out", data,
    )
    ingest = root / "ingest"
    run_cli(
        "ingest", "--interactions", data / "interactions.tsv",
        "--threshold", 3, "--out", ingest,
    )
    graph_dir = root / "graph"
    run_cli(
        "build-prior", "--interactions", data / "interactions.tsv",
        "--embeddings", data / "embeddings.bin", "--items", data / "items.tsv",
        "--kernel", "global", "--K", 5, "--out", graph_dir,
    )
    mf_dir = root / "mf"
    run_cli(
        "train", "--interactions", data / "interactions.tsv",
        "--model", "mf", "--prior", "graph", "--graph", graph_dir / "graph.bin",
        "--d", 8, "--epochs", 2, "--lr", 0.05, "--out", mf_dir,
    )
    return root


class TestSynth:
    def test_outputs_present(self, workspace):
        data = workspace / "data"
        for name in ("interactions.tsv", "embeddings.bin", "items.tsv",
                     "truth.json", "config-synth.json"):
            assert (data / name).exists()

    def test_stdout_stats(self, workspace, tmp_path):
        proc = run_cli(
            "synth", "--users", 30, "--items", 24, "--clusters", 3, "--dim", 4,
            "--cold-frac", 0.0, "--out", tmp_path,
        )
        assert "users: 30" in proc.stdout
        assert "cold items: 0" in proc.stdout


class TestIngest:
    def test_stats_and_log(self, workspace):
        ingest = workspace / "ingest"
        stats = json.loads((ingest / "stats.json").read_text())
        assert stats["users"] == 50
        assert stats["items"] == 40
        assert stats["cold_start_items"] == 4
        assert (ingest / "log.json").exists()
        cfg = json.loads((ingest / "config-ingest.json").read_text())
        assert cfg["threshold"] == 3

    def test_missing_file_is_data_error(self, tmp_path):
        proc = run_cli(
            "ingest", "--interactions", tmp_path / "nope.tsv",
            "--out", tmp_path, check=False,
        )
        assert proc.returncode == 3
        assert "error:" in proc.stderr

    def test_out_env_override(self, workspace, tmp_path):
        data = workspace / "data"
        override = tmp_path / "redirected"
        run_cli(
            "ingest", "--interactions", data / "interactions.tsv",
            "--out", tmp_path / "ignored",
            env_extra={"LMPRIOR_OUT": str(override)},
        )
        assert (override / "stats.json").exists()
        assert not (tmp_path / "ignored").exists()


class TestBuildPrior:
    def test_graph_and_histogram(self, workspace):
        graph_dir = workspace / "graph"
        assert (graph_dir / "graph.bin").exists()
        assert (graph_dir / "config-build-prior.json").exists()

    def test_default_k_reported(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "build-prior", "--interactions", data / "interactions.tsv",
            "--embeddings", data / "embeddings.bin", "--items", data / "items.tsv",
            "--kernel", "local", "--out", tmp_path,
        )
        assert "(K=6)" in proc.stdout  # floor(sqrt(40))
        assert "weight histogram:" in proc.stdout
        assert (tmp_path / "graph.bin").exists()

    def test_k_out_of_range_is_usage_error(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "build-prior", "--interactions", data / "interactions.tsv",
            "--embeddings", data / "embeddings.bin", "--items", data / "items.tsv",
            "--K", 40, "--out", tmp_path, check=False,
        )
        assert proc.returncode == 2


class TestTrain:
    def test_mf_checkpoint_written(self, workspace):
        assert (workspace / "mf" / "checkpoint.bin").exists()
        assert (workspace / "mf" / "config-train.json").exists()

    def test_seq_training(self, workspace, tmp_path):
        data = workspace / "data"
        run_cli(
            "train", "--interactions", data / "interactions.tsv",
            "--model", "seq", "--prior", "none", "--d", 8, "--maxlen", 10,
            "--epochs", 2, "--lr", 0.05, "--out", tmp_path,
        )
        assert (tmp_path / "checkpoint.bin").exists()

    def test_graph_prior_without_graph_is_usage_error(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "train", "--interactions", data / "interactions.tsv",
            "--model", "mf", "--prior", "graph", "--epochs", 1,
            "--out", tmp_path, check=False,
        )
        assert proc.returncode == 2


class TestEval:
    def test_report_and_determinism(self, workspace, tmp_path):
        data = workspace / "data"
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            proc = run_cli(
                "eval", "--interactions", data / "interactions.tsv",
                "--threshold", 3, "--checkpoint", workspace / "mf" / "checkpoint.bin",
                "--ks", "5,10", "--out", out,
            )
            assert proc.stdout.startswith("model,slice,metric,k,value")
            outs.append((out / "report.csv").read_bytes())
        assert outs[0] == outs[1]
        text = outs[0].decode()
        assert ",ndcg,5," in text and ",hr,10," in text
        assert "mf," in text

    def test_seq_checkpoint_dispatch(self, workspace, tmp_path):
        data = workspace / "data"
        seq_dir = tmp_path / "seqmodel"
        run_cli(
            "train", "--interactions", data / "interactions.tsv",
            "--model", "seq", "--prior", "none", "--d", 8, "--maxlen", 10,
            "--epochs", 1, "--lr", 0.05, "--out", seq_dir,
        )
        out = tmp_path / "eval"
        run_cli(
            "eval", "--interactions", data / "interactions.tsv",
            "--threshold", 3, "--checkpoint", seq_dir / "checkpoint.bin",
            "--ks", "5", "--mask-seen", "--out", out,
        )
        assert "seq," in (out / "report.csv").read_text()

    def test_custom_tag(self, workspace, tmp_path):
        data = workspace / "data"
        run_cli(
            "eval", "--interactions", data / "interactions.tsv",
            "--threshold", 3, "--checkpoint", workspace / "mf" / "checkpoint.bin",
            "--ks", "5", "--tag", "run7", "--out", tmp_path,
        )
        assert "run7," in (tmp_path / "report.csv").read_text()

    def test_bad_ks_is_usage_error(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "eval", "--interactions", data / "interactions.tsv",
            "--checkpoint", workspace / "mf" / "checkpoint.bin",
            "--ks", "0", "--out", tmp_path, check=False,
        )
        assert proc.returncode == 2

    def test_missing_checkpoint_is_data_error(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "eval", "--interactions", data / "interactions.tsv",
            "--checkpoint", tmp_path / "nope.bin",
            "--ks", "10", "--out", tmp_path, check=False,
        )
        assert proc.returncode == 3
        assert "error:" in proc.stderr
        assert "Traceback" not in proc.stderr


class TestSweepRho:
    def test_baseline_rows_are_unity(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "sweep-rho", "--interactions", data / "interactions.tsv",
            "--threshold", 3, "--model", "mf", "--prior", "graph",
            "--graph", workspace / "graph" / "graph.bin",
            "--d", 8, "--epochs", 2, "--lr", 0.05,
            "--grid", "0,0.5", "--ks", "5", "--out", tmp_path,
        )
        rel = (tmp_path / "sweep.csv").read_text().strip().split("\n")
        assert rel[0] == "rho,slice,metric,k,value"
        base_rows = [r for r in rel[1:] if r.startswith("0,")]
        assert base_rows and all(r.endswith(",1.000000") for r in base_rows)
        assert (tmp_path / "sweep-absolute.csv").exists()
        assert "rho=0.5: training mf" in proc.stdout

    def test_grid_must_include_zero(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "sweep-rho", "--interactions", data / "interactions.tsv",
            "--model", "mf", "--prior", "l2", "--grid", "0.5,1",
            "--out", tmp_path, check=False,
        )
        assert proc.returncode == 2

    def test_prior_none_rejected(self, workspace, tmp_path):
        data = workspace / "data"
        proc = run_cli(
            "sweep-rho", "--interactions", data / "interactions.tsv",
            "--model", "mf", "--prior", "none", "--grid", "0,1",
            "--out", tmp_path, check=False,
        )
        assert proc.returncode == 2
