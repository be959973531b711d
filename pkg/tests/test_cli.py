"""End-to-end command-line contract: exit codes, artifacts, manifests.

A session-scoped fixture trains a tiny pipeline once; the command tests
then run against its checkpoints in-process via `cli.main`.
"""

import json
import os

import numpy as np
import pytest

from hmwm import cli
from hmwm.checkpoint import load_checkpoint
from hmwm.manifest import file_sha256, load_manifest
from hmwm.training import read_loss_csv
from hmwm.variants import load_world_model
from hmwm import worldgen as wg

CFG_LINES = """\
# tiny geometry for test runtime
T = 4
spatial_depth = 1
temporal_depth = 1
codec_steps = 40
epochs1 = 1
epochs2 = 1
epochs3 = 1
log_every = 5
"""


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train_seq = root / "train.seq"
    eval_seq = root / "eval.seq"
    cfg = root / "cfg.ini"
    cfg.write_text(CFG_LINES)
    assert run("gen-data", "--count", 56, "--out", train_seq, "--seed", 3,
               "--frames", 4, "--instances", 20) == 0
    assert run("gen-data", "--count", 100, "--out", eval_seq, "--seed", 5,
               "--frames", 4, "--instances", 28) == 0
    out = root / "run"
    for stage in (0, 1, 2, 3):
        code = run("train", "--stage", stage, "--config", cfg,
                   "--data", train_seq, "--out", out, "--seed", 0,
                   "--deterministic")
        assert code == 0, f"stage {stage} failed"
    return {"root": root, "train": train_seq, "eval": eval_seq,
            "cfg": cfg, "out": out}


class TestGenData:
    def test_archive_and_manifest(self, pipeline):
        seq = pipeline["train"]
        recs = wg.read_archive(seq)
        assert len(recs) == 56
        assert recs[0].frames.shape == (4, 32, 32, 3)
        man = load_manifest(str(seq) + ".manifest.json")
        assert man["artifact_hashes"][str(seq)] == file_sha256(seq)
        assert "gen-data" in man["command"]

    def test_bad_band_usage_error(self, tmp_path, capsys):
        code = run("gen-data", "--count", 2, "--out", tmp_path / "x.seq",
                   "--rot-band", "oops")
        assert code == 1
        assert "rot-band" in capsys.readouterr().err

    def test_kind_restriction(self, tmp_path):
        seq = tmp_path / "rot.seq"
        assert run("gen-data", "--count", 6, "--out", seq, "--seed", 1,
                   "--frames", 3, "--kinds", "rotation",
                   "--rot-band", "20,30") == 0
        recs = wg.read_archive(seq)
        assert all(r.label.kind == "rotation" for r in recs)
        assert all(20 <= abs(r.label.magnitude) <= 30 for r in recs)


class TestTrain:
    def test_missing_prerequisite_exit_2(self, tmp_path, capsys, pipeline):
        code = run("train", "--stage", 2, "--data", pipeline["train"],
                   "--out", tmp_path, "--seed", 0)
        assert code == 2
        assert "stage1.npz" in capsys.readouterr().err

    def test_artifacts(self, pipeline):
        out = pipeline["out"]
        for stage in (0, 1, 2, 3):
            assert (out / f"stage{stage}.npz").exists()
            assert (out / f"manifest_stage{stage}.json").exists()
        rows = read_loss_csv(out / "loss_stage2.csv")
        assert rows and all(r["stage"] == 2 for r in rows)
        man = load_manifest(out / "manifest_stage3.json")
        assert str(out / "stage3.npz") in man["artifact_hashes"]
        assert man["deterministic"] is True
        assert man["started"] == 0.0

    def test_checkpoint_loads_as_full_variant(self, pipeline):
        model = load_world_model(pipeline["out"] / "stage3.npz")
        assert model.variant == "full"
        assert model.cfg.T == 4

    @pytest.mark.filterwarnings(
        "ignore:variant 'encoder_direct' has no stage-1")
    def test_stage2_reads_variant_from_checkpoint(self, pipeline, tmp_path):
        out = tmp_path / "ed"
        out.mkdir()
        # reuse the fitted codec, then train a different family
        (out / "stage0.npz").write_bytes(
            (pipeline["out"] / "stage0.npz").read_bytes())
        assert run("train", "--stage", 1, "--config", pipeline["cfg"],
                   "--data", pipeline["train"], "--out", out,
                   "--variant", "encoder_direct", "--seed", 0) == 0
        assert run("train", "--stage", 2, "--config", pipeline["cfg"],
                   "--data", pipeline["train"], "--out", out,
                   "--seed", 0) == 0
        model = load_world_model(out / "stage2.npz")
        assert model.variant == "encoder_direct"

    def test_variant_mismatch_exit_2(self, pipeline, tmp_path, capsys):
        out = tmp_path / "mm"
        out.mkdir()
        (out / "stage1.npz").write_bytes(
            (pipeline["out"] / "stage1.npz").read_bytes())
        code = run("train", "--stage", 2, "--config", pipeline["cfg"],
                   "--data", pipeline["train"], "--out", out,
                   "--variant", "no_cann_mlp", "--seed", 0)
        assert code == 2
        assert "variant" in capsys.readouterr().err

    def test_unknown_config_key_exit_1(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("T = 4\nwarp_speed = 9\n")
        code = run("train", "--stage", 0, "--config", bad,
                   "--data", pipeline["train"], "--out", tmp_path)
        assert code == 1
        assert "warp_speed" in capsys.readouterr().err

    def test_flag_overrides_config_file(self, pipeline, tmp_path):
        out = tmp_path / "ovr"
        out.mkdir()
        (out / "stage0.npz").write_bytes(
            (pipeline["out"] / "stage0.npz").read_bytes())
        # file says 1 epoch; --set doubles it; row count shows who won
        assert run("train", "--stage", 1, "--config", pipeline["cfg"],
                   "--set", "epochs1=2", "--data", pipeline["train"],
                   "--out", out, "--seed", 0) == 0
        rows = read_loss_csv(out / "loss_stage1.csv")
        base = read_loss_csv(pipeline["out"] / "loss_stage1.csv")
        assert len(rows) == 2 * len(base)
        man = load_manifest(out / "manifest_stage1.json")
        assert man["config"]["epochs1"] == 2

    def test_input_archive_not_mutated(self, pipeline):
        before = file_sha256(pipeline["train"])
        man = load_manifest(str(pipeline["train"]) + ".manifest.json")
        assert man["artifact_hashes"][str(pipeline["train"])] == before

    def test_deterministic_rerun_bit_identical(self, pipeline, tmp_path):
        out = tmp_path / "rep"
        first = {}
        for _ in range(2):
            assert run("train", "--stage", 0, "--config", pipeline["cfg"],
                       "--data", pipeline["train"], "--out", out,
                       "--seed", 4, "--deterministic") == 0
            blob = (out / "stage0.npz").read_bytes()
            manifest = (out / "manifest_stage0.json").read_bytes()
            if first:
                assert blob == first["blob"]
                assert manifest == first["manifest"]
            first = {"blob": blob, "manifest": manifest}

    def test_numerical_abort_exit_3(self, pipeline, tmp_path, capsys):
        out = tmp_path / "nab"
        out.mkdir()
        (out / "stage0.npz").write_bytes(
            (pipeline["out"] / "stage0.npz").read_bytes())
        with np.errstate(all="ignore"):
            code = run("train", "--stage", 1, "--config", pipeline["cfg"],
                       "--set", "lr1=1e200", "--data", pipeline["train"],
                       "--out", out, "--seed", 0)
        assert code == 3
        assert "non-finite" in capsys.readouterr().err


class TestRollout:
    def test_metrics_csv(self, pipeline, tmp_path):
        assert run("rollout", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--archive", pipeline["eval"], "--out", tmp_path,
                   "--feedback", 2) == 0
        with open(tmp_path / "rollout.csv") as fh:
            header = fh.readline().strip().split(",")
        assert {"schedule", "step", "ssim", "latent_err"} <= set(header)
        assert (tmp_path / "manifest_rollout.json").exists()

    def test_bad_feedback_step(self, pipeline, tmp_path, capsys):
        code = run("rollout", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--archive", pipeline["eval"], "--out", tmp_path,
                   "--feedback", 9)
        assert code == 1
        assert "feedback" in capsys.readouterr().err

    def test_horizon_out_of_range(self, pipeline, tmp_path):
        assert run("rollout", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--archive", pipeline["eval"], "--out", tmp_path,
                   "--horizon", 99) == 1


class TestAnalysisCommands:
    def test_probe(self, pipeline, tmp_path):
        assert run("probe", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", pipeline["eval"], "--out", tmp_path,
                   "--n-seeds", 2, "--epochs", 2) == 0
        summary = json.loads((tmp_path / "probe_summary.json").read_text())
        assert summary["seeds"] == [0, 1]
        for name in ("z", "dg_inf", "dp_inf", "p_inf", "g_inf"):
            block = summary[f"transition_{name}"]
            assert 0.0 <= block["mean"] <= 1.0
            conf = np.array(block["confusion"])
            assert conf.shape == (4, 4)
            assert conf.sum() > 0
        assert "category_p_inf" in summary and "category_g_inf" in summary
        with open(tmp_path / "probe.csv") as fh:
            assert fh.readline().strip() == \
                "task,embedding,seed,test_acc,train_acc"

    def test_transfer(self, pipeline, tmp_path):
        assert run("transfer", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", pipeline["eval"], "--out", tmp_path,
                   "--n-seeds", 2, "--pairs", 2) == 0
        summary = json.loads(
            (tmp_path / "transfer_summary.json").read_text())
        assert np.isfinite(summary["R_one_step"])
        assert np.isfinite(summary["R_autoregressive"])
        assert len(summary["checkpoint"]) == 40  # git-style sha1
        rows = (tmp_path / "transfer.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 2

    def test_compose(self, pipeline, tmp_path):
        assert run("compose", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--out", tmp_path, "--steps", 3) == 0
        summary = json.loads((tmp_path / "compose_summary.json").read_text())
        assert summary["gap"] == pytest.approx(
            abs(summary["ssim_real"] - summary["ssim_composed"]))
        ppms = sorted((tmp_path / "frames").glob("*.ppm"))
        assert len(ppms) == 3 * 3
        head = ppms[0].read_bytes()[:15]
        assert head.startswith(b"P6\n32 32\n255\n")

    def test_compose_shape_from_archive(self, pipeline, tmp_path):
        assert run("compose", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", pipeline["eval"], "--out", tmp_path,
                   "--steps", 2) == 0
        summary = json.loads((tmp_path / "compose_summary.json").read_text())
        assert summary["shape"] == \
            wg.read_archive(pipeline["eval"])[0].shape.kind

    def test_report(self, pipeline, tmp_path):
        assert run("report", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", pipeline["eval"], "--out", tmp_path) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert 0.0 <= summary["zero_z"]["fraction_prev"] <= 1.0
        assert np.isfinite(summary["one_step_ssim"])
        assert np.isfinite(summary["copy_baseline_ssim"])
        assert set(summary["mean_ssim"]) == {"none", "2", "all"}

    def test_project(self, pipeline, tmp_path):
        assert run("project", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", pipeline["eval"], "--out", tmp_path) == 0
        rows = (tmp_path / "projection.csv").read_text().strip().splitlines()
        assert rows[0] == "sequence,step,c1,c2"
        assert len(rows) == 1 + 100 * 4

    def test_ablate(self, pipeline, tmp_path):
        assert run("ablate", "--variant", "encoder_direct",
                   "--ckpt", pipeline["out"] / "stage0.npz",
                   "--data", pipeline["train"], "--eval", pipeline["eval"],
                   "--out", tmp_path, "--config", pipeline["cfg"],
                   "--n-seeds", 1, "--pairs", 1) == 0
        summary = json.loads(
            (tmp_path / "summary_encoder_direct.json").read_text())
        assert summary["variant"] == "encoder_direct"
        assert 0.0 <= summary["probe_z_accuracy"] <= 1.0
        model = load_world_model(tmp_path / "ablate_encoder_direct.npz")
        assert model.variant == "encoder_direct"


class TestDispatch:
    def test_help_exit_0(self, capsys):
        for sub in ("gen-data", "train", "rollout", "transfer", "probe",
                    "compose", "ablate", "report", "project"):
            assert run(sub, "--help") == 0
            assert "usage" in capsys.readouterr().out
        assert run("--help") == 0
        capsys.readouterr()

    def test_unknown_subcommand_exit_1(self, capsys):
        assert run("frobnicate") == 1
        assert "usage" in capsys.readouterr().err

    def test_no_argv_exit_1(self, capsys):
        assert run() == 1
        capsys.readouterr()

    def test_bad_archive_exit_2(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.seq"
        bad.write_bytes(b"garbage")
        assert run("report", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", bad, "--out", tmp_path) == 2
        capsys.readouterr()

    def test_bad_checkpoint_exit_2(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"\x00" * 64)
        assert run("report", "--ckpt", bad, "--data", pipeline["eval"],
                   "--out", tmp_path) == 2
        capsys.readouterr()

    def test_missing_input_exit_2(self, tmp_path, capsys):
        assert run("report", "--ckpt", tmp_path / "nope.npz",
                   "--data", tmp_path / "nope.seq",
                   "--out", tmp_path) == 2
        capsys.readouterr()

    def test_progress_lines_are_key_value(self, pipeline, tmp_path, capsys):
        assert run("project", "--ckpt", pipeline["out"] / "stage3.npz",
                   "--data", pipeline["eval"], "--out", tmp_path) == 0
        out = capsys.readouterr().out
        for line in out.strip().splitlines():
            assert "=" in line, line

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("HMWM_THREADS", "4")
        monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
        cli._configure_threads([])
        assert os.environ["OMP_NUM_THREADS"] == "4"
        cli._configure_threads(["--deterministic"])
        assert os.environ["OMP_NUM_THREADS"] == "1"


class TestConfigParsing:
    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("\n# comment\nT = 6  # trailing\n\nd_model = 32\n")
        assert cli.read_config_file(p) == {"T": "6", "d_model": "32"}

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("T: 6\n")
        from hmwm.errors import DataFormatError
        with pytest.raises(DataFormatError, match="key = value"):
            cli.read_config_file(p)

    def test_effective_config_precedence(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("T = 6\nlr1 = 0.01\n")
        cfg = cli.effective_config(p, ["T=5"])
        assert cfg["T"] == 5          # flag beats file
        assert cfg["lr1"] == 0.01     # file beats default
        assert cfg["D_z"] == 8        # default survives

    def test_type_coercion_error(self, tmp_path):
        with pytest.raises(ValueError, match="epochs1"):
            cli.effective_config(None, ["epochs1=soon"])
