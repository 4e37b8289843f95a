"""CLI command plumbing, stage caching, and manifest validation on a tiny
experiment."""

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_profiles
from zest.cli import main
from zest.pipeline import (ExperimentConfig, StageError, resolve_config,
                           run_pipeline, run_sweep, stage_baseline,
                           stage_eval, stage_ingest)
from zest.synth import save_profiles

SANE_OVERRIDES = {"d_model": 16, "e": 1, "h": 2, "d_mlp": 32, "M": 8, "N": 3,
                  "batch_size": 16, "epochs": 6, "learning_rate": 3e-3}


@pytest.fixture(scope="module")
def profile_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("profiles") / "tiny.json"
    save_profiles(tiny_profiles(num_devices=5, sessions=25), path)
    return path


def _base_args(outdir, profile_file):
    return ["--outdir", str(outdir), "--profiles", str(profile_file),
            "--n", "10", "--num-unseen", "2", "--seed-list", "0",
            "--sane", json.dumps(SANE_OVERRIDES),
            "--cvae", json.dumps({"z_dim": 4, "epochs": 60}),
            "--pseudo-k", "40"]


@pytest.fixture(scope="module")
def experiment(tmp_path_factory, profile_file):
    outdir = tmp_path_factory.mktemp("exp") / "run"
    assert main(["ingest"] + _base_args(outdir, profile_file)) == 0
    for cmd in ("train-sane", "extract-attrs", "train-cvae", "gen-pseudo",
                "train-clf", "eval"):
        assert main([cmd, "--outdir", str(outdir), "--seed", "0"]) == 0
    return outdir


def test_synth_command(tmp_path, profile_file):
    out = tmp_path / "traffic.csv"
    assert main(["synth", "--profiles", str(profile_file), "--out", str(out),
                 "--seed", "3"]) == 0
    header = out.read_text().splitlines()[0]
    assert header.startswith("timestamp,src_port,dst_port")


def test_synth_requires_one_source(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x.csv")]) == 1


def test_stage_artifacts_exist(experiment):
    rdir = experiment / "runs" / "seed-0"
    for name in ("partition.json", "normalizer.json", "sane.ckpt",
                 "sane_log.csv", "latents.npz", "attributes.csv",
                 "cvae.ckpt", "pseudo.csv", "svm_zsl.json", "svm_gzsl.json",
                 "report_zsl.json", "report_gzsl.json", "report.txt"):
        assert (rdir / name).exists(), name


def test_stage_cache_hit_skips_retraining(experiment):
    ckpt = experiment / "runs" / "seed-0" / "sane.ckpt"
    before = ckpt.stat().st_mtime_ns
    assert main(["train-sane", "--outdir", str(experiment),
                 "--seed", "0"]) == 0
    assert ckpt.stat().st_mtime_ns == before


def test_config_change_invalidates_cache(experiment):
    # a different pseudo-k must regenerate pseudo data but not the model
    pseudo = experiment / "runs" / "seed-0" / "pseudo.csv"
    ckpt = experiment / "runs" / "seed-0" / "sane.ckpt"
    ckpt_before = ckpt.stat().st_mtime_ns
    rows_before = len(pseudo.read_text().splitlines())
    assert main(["gen-pseudo", "--outdir", str(experiment), "--seed", "0",
                 "--pseudo-k", "25"]) == 0
    assert len(pseudo.read_text().splitlines()) == 1 + 25 * 5
    assert ckpt.stat().st_mtime_ns == ckpt_before
    # restore for other tests
    assert main(["gen-pseudo", "--outdir", str(experiment), "--seed", "0",
                 "--pseudo-k", "40"]) == 0
    assert len(pseudo.read_text().splitlines()) == rows_before


def test_corrupted_upstream_artifact_fatal(experiment, tmp_path):
    work = tmp_path / "copy"
    shutil.copytree(experiment, work)
    ckpt = work / "runs" / "seed-0" / "sane.ckpt"
    raw = bytearray(ckpt.read_bytes())
    raw[-1] ^= 0xFF
    ckpt.write_bytes(bytes(raw))
    assert main(["extract-attrs", "--outdir", str(work), "--seed", "0"]) == 1


def test_missing_upstream_manifest_fatal(tmp_path, profile_file):
    outdir = tmp_path / "fresh"
    assert main(["ingest"] + _base_args(outdir, profile_file)) == 0
    # skip train-sane: extract-attrs must name the stage to re-run
    assert main(["extract-attrs", "--outdir", str(outdir),
                 "--seed", "0"]) == 1


def test_baseline_command(experiment):
    assert main(["baseline", "seqcs", "--outdir", str(experiment),
                 "--seed", "0"]) == 0
    payload = json.loads(
        (experiment / "runs" / "seed-0" / "baseline_seqcs.json").read_text())
    assert set(payload) == {"zsl", "gzsl"}


def test_lock_blocks_concurrent_runs(experiment):
    lock = experiment / ".lock"
    lock.write_text("999999")
    try:
        assert main(["eval", "--outdir", str(experiment), "--seed", "0"]) == 1
    finally:
        lock.unlink()


def test_unknown_baseline_rejected(experiment):
    with pytest.raises(SystemExit):
        main(["baseline", "nope", "--outdir", str(experiment)])


def test_eval_reports_have_expected_settings(experiment):
    for setting in ("zsl", "gzsl"):
        payload = json.loads((experiment / "runs" / "seed-0" /
                              f"report_{setting}.json").read_text())
        assert payload["setting"] == setting
        assert 0.0 <= payload["accuracy"] <= 1.0


class TestPipelineAndSweep:
    @pytest.fixture(scope="class")
    def pipe_dir(self, tmp_path_factory, profile_file):
        outdir = tmp_path_factory.mktemp("pipe") / "exp"
        args = _base_args(outdir, profile_file)
        # two partition seeds
        args[args.index("--seed-list") + 1:args.index("--seed-list") + 2] = ["0"]
        assert main(["pipeline"] + args[:args.index("--seed-list")] +
                    ["--seed-list", "0", "1"] +
                    args[args.index("--seed-list") + 2:]) == 0
        return outdir

    def test_aggregate_report_written(self, pipe_dir):
        report = (pipe_dir / "report.csv").read_text().splitlines()
        assert report[0] == "method,setting,mean_accuracy,std_accuracy,num_seeds"
        methods = {line.split(",")[0] for line in report[1:]}
        assert methods == {"zest", "vae-k", "seqcr", "seqcs", "deft"}
        assert all(line.split(",")[4] == "2" for line in report[1:])

    def test_pipeline_rerun_is_cache_hit(self, pipe_dir):
        ckpt = pipe_dir / "runs" / "seed-1" / "sane.ckpt"
        before = ckpt.stat().st_mtime_ns
        assert main(["pipeline", "--outdir", str(pipe_dir)]) == 0
        assert ckpt.stat().st_mtime_ns == before

    def test_pipeline_reports_reproducible(self, pipe_dir, tmp_path_factory,
                                           profile_file):
        outdir = tmp_path_factory.mktemp("pipe2") / "exp"
        args = _base_args(outdir, profile_file)
        assert main(["pipeline"] + args[:args.index("--seed-list")] +
                    ["--seed-list", "0", "1"] +
                    args[args.index("--seed-list") + 2:]) == 0
        assert ((pipe_dir / "report.csv").read_text()
                == (outdir / "report.csv").read_text())

    def test_sweep_command(self, pipe_dir):
        assert main(["sweep", "unseen", "1", "2", "--outdir",
                     str(pipe_dir)]) == 0
        sweep_csv = pipe_dir / "sweep-unseen" / "sweep.csv"
        lines = sweep_csv.read_text().splitlines()
        assert lines[0].startswith("param,value,method,setting")
        values = {line.split(",")[1] for line in lines[1:]}
        assert values == {"1", "2"}

    def test_sweep_unknown_param(self, pipe_dir):
        with pytest.raises(SystemExit):
            main(["sweep", "bogus", "1", "--outdir", str(pipe_dir)])
