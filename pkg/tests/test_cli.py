import json
import os

import numpy as np
import pytest

from fdbridge.cli import main, validate_config
from fdbridge.errors import ConfigError
from fdbridge.fileio import read_cimg, read_csv, read_json, read_kmsk
from fdbridge.metrics import psnr, ssim
from fdbridge.recovery import load_checkpoint

SMALL_CONFIG = {
    "seed": 11,
    "data": {"dims": 32, "count": 4, "contrast": "t1_like"},
    "process": {"R_prime": 2.0, "T_f": 8},
    "sampler": {"R": 4.0, "correction": "learned"},
    "train": {"learning_rate": 0.02, "epochs": 2, "batch": 2},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


def run(*argv):
    return main(list(argv))


class TestConfigValidation:
    def test_defaults_fill_missing_sections(self):
        cfg = validate_config({"seed": 3})
        assert cfg["process"]["T_f"] == 64
        assert cfg["sampler"]["dc_every_step"] is True

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            validate_config({"nope": 1})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="process.wat"):
            validate_config({"process": {"wat": 1}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            validate_config({"seed": "not-an-int"})
        with pytest.raises(ConfigError):
            validate_config({"sampler": {"dc_every_step": "yes"}})


class TestExitCodes:
    def test_unknown_subcommand(self, tmp_path, capsys):
        assert run("frobnicate", "--out", str(tmp_path)) == 1

    def test_unknown_flag(self, tmp_path):
        assert run("phantom", "--out", str(tmp_path), "--bogus") == 1

    def test_config_error_is_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"unknown_key": 1}')
        assert run("phantom", "--config", str(bad), "--out", str(tmp_path / "o")) == 1

    def test_runtime_failure_is_two(self, tmp_path):
        assert (
            run("metrics", "--out", str(tmp_path / "m"), "--ref", "missing.cimg", "--test", "missing.cimg")
            == 2
        )

    def test_success_is_zero(self, tmp_path, config_path):
        assert run("phantom", "--config", config_path, "--out", str(tmp_path / "ds")) == 0


class TestPhantom:
    def test_dataset_layout_and_manifest(self, tmp_path, config_path):
        out = tmp_path / "ds"
        assert run("phantom", "--config", config_path, "--out", str(out)) == 0
        manifest = read_json(out / "manifest.json")
        assert manifest["count"] == 4
        assert len(manifest["ids"]) == 4
        for name in manifest["ids"]:
            img = read_cimg(out / "images" / name)
            assert img.shape == (32, 32)
        run_manifest = read_json(out / "run_manifest.json")
        assert run_manifest["command"] == "phantom"
        assert "images/0000.cimg" in run_manifest["outputs"]

    def test_seed_override_changes_data(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("phantom", "--config", config_path, "--out", str(a))
        run("phantom", "--config", config_path, "--seed", "99", "--out", str(b))
        img_a = read_cimg(a / "images" / "0000.cimg")
        img_b = read_cimg(b / "images" / "0000.cimg")
        assert not np.array_equal(img_a, img_b)


class TestMaskAndForward:
    def test_mask_artifacts(self, tmp_path, config_path):
        out = tmp_path / "masks"
        assert run("mask", "--config", config_path, "--out", str(out), "--count", "2",
                   "--density", "normal1d") == 0
        meta = read_json(out / "masks.json")
        assert meta["count"] == 2 and meta["density"] == "normal1d"
        for name in meta["files"]:
            mask = read_kmsk(out / name)
            assert np.array_equal(mask, np.repeat(mask[0][None, :], 32, axis=0))

    def test_forward_snapshots(self, tmp_path, config_path):
        out = tmp_path / "fwd"
        assert run("forward", "--config", config_path, "--out", str(out),
                   "--snapshots", "0,4,8") == 0
        meta = read_json(out / "trajectory.json")
        assert meta["T_f"] == 8 and meta["n"] == 64
        assert sorted(meta["mask_files"]) == ["0", "4", "8"]
        mask0 = read_kmsk(out / meta["mask_files"]["0"])
        assert mask0.all()
        mask8 = read_kmsk(out / meta["mask_files"]["8"])
        assert mask8.sum() == 32 * 32 // 2
        corrupted = read_cimg(out / "corrupted_t0008.cimg")
        original = read_cimg(out / "original.cimg")
        assert np.linalg.norm(corrupted) <= np.linalg.norm(original) * (1 + 1e-12)


class TestEstimateW:
    def test_first_row_weight_is_one(self, tmp_path, config_path):
        out = tmp_path / "west"
        assert run("estimate-w", "--config", config_path, "--out", str(out),
                   "--mc-samples", "100", "--no-plot") == 0
        header, rows = read_csv(out / "schedule.csv")
        assert header == ["t", "w"]
        assert rows[0][0] == "1" and float(rows[0][1]) == 1.0
        meta = read_json(out / "schedule.json")
        assert meta["provenance"] == "monte_carlo"
        assert meta["mc_samples"] == 100
        assert meta["R_prime"] == 2.0 and meta["T_f"] == 8


class TestTrainReconstruct:
    def test_pipeline(self, tmp_path, config_path):
        ds, west, tr, rec = (tmp_path / n for n in ("ds", "west", "tr", "rec"))
        assert run("phantom", "--config", config_path, "--out", str(ds)) == 0
        assert run("estimate-w", "--config", config_path, "--out", str(west),
                   "--dataset", str(ds), "--mc-samples", "100", "--no-plot") == 0
        assert run("train", "--config", config_path, "--out", str(tr),
                   "--dataset", str(ds)) == 0
        model, header = load_checkpoint(tr / "checkpoint.ckpt")
        assert header["T_f"] == 8
        trace_header, trace_rows = read_csv(tr / "loss_trace.csv")
        assert trace_header == ["epoch", "loss"] and len(trace_rows) == 2

        assert run("reconstruct", "--config", config_path, "--out", str(rec),
                   "--checkpoint", str(tr / "checkpoint.ckpt"),
                   "--schedule", str(west / "schedule.csv")) == 0
        summary = read_json(rec / "summary.json")
        assert summary["T_r"] == 12  # floor(8 * 3 * 2 / 4)
        _, diag = read_csv(rec / "diagnostics.csv")
        assert len(diag) == 12
        meas = read_json(rec / "measurement" / "measurement.json")
        assert meas["R"] == 4.0 and meas["C"] == 1
        ref = read_cimg(rec / "reference.cimg")
        recon = read_cimg(rec / "recon.cimg")
        assert summary["psnr_recon_db"] == pytest.approx(psnr(ref, recon), rel=1e-12)

    def test_learned_correction_without_schedule_is_config_error(self, tmp_path, config_path):
        assert run("reconstruct", "--config", config_path, "--out", str(tmp_path / "r")) == 1

    def test_ddpm_reconstruct_smoke(self, tmp_path, config_path):
        out = tmp_path / "drec"
        assert run("ddpm-reconstruct", "--config", config_path, "--out", str(out),
                   "--ddpm-steps", "30") == 0
        assert (out / "recon.cimg").exists()
        _, diag = read_csv(out / "diagnostics.csv")
        assert len(diag) == 30


class TestAblate:
    def test_seven_variant_rows(self, tmp_path, config_path):
        out = tmp_path / "abl"
        assert run("ablate", "--config", config_path, "--out", str(out),
                   "--eval-count", "2", "--mc-samples", "60") == 0
        header, rows = read_csv(out / "ablation.csv")
        assert header == ["variant", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]
        assert [r[0] for r in rows] == [
            "fdb", "ct_uniform", "n_log_schedule", "xt_averaging",
            "ct_fixed", "no_correction", "wt_linear",
        ]
        for row in rows:
            assert np.isfinite(float(row[1])) and np.isfinite(float(row[3]))


class TestMetrics:
    def test_matches_library_values(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        run("phantom", "--config", config_path, "--out", str(ds))
        other = tmp_path / "ds2"
        run("phantom", "--config", config_path, "--seed", "77", "--out", str(other))
        out = tmp_path / "met"
        assert run("metrics", "--out", str(out), "--ref", str(ds), "--test", str(other)) == 0
        header, rows = read_csv(out / "metrics.csv")
        assert header == ["ref", "test", "psnr_db", "ssim"]
        assert len(rows) == 4
        a = read_cimg(ds / "images" / rows[0][0])
        b = read_cimg(other / "images" / rows[0][1])
        assert float(rows[0][2]) == pytest.approx(psnr(a, b), rel=1e-12)
        assert float(rows[0][3]) == pytest.approx(ssim(a, b), rel=1e-12)


class TestReplayDeterminism:
    def test_estimate_w_replay_byte_identical(self, tmp_path, config_path):
        w1, w2 = tmp_path / "w1", tmp_path / "w2"
        assert run("estimate-w", "--config", config_path, "--out", str(w1),
                   "--mc-samples", "80", "--no-plot") == 0
        assert run("replay", str(w1 / "run_manifest.json"), "--out", str(w2)) == 0
        assert (w1 / "schedule.csv").read_bytes() == (w2 / "schedule.csv").read_bytes()

    def test_phantom_replay_byte_identical(self, tmp_path, config_path):
        p1, p2 = tmp_path / "p1", tmp_path / "p2"
        run("phantom", "--config", config_path, "--out", str(p1))
        assert run("replay", str(p1 / "run_manifest.json"), "--out", str(p2)) == 0
        for name in read_json(p1 / "manifest.json")["ids"]:
            assert (p1 / "images" / name).read_bytes() == (p2 / "images" / name).read_bytes()


class TestThreads:
    def test_env_fallback_and_output_stability(self, tmp_path, config_path, monkeypatch):
        ds = tmp_path / "ds"
        run("phantom", "--config", config_path, "--out", str(ds))
        other = tmp_path / "ds2"
        run("phantom", "--config", config_path, "--seed", "5", "--out", str(other))

        serial = tmp_path / "m1"
        assert run("metrics", "--out", str(serial), "--ref", str(ds), "--test", str(other),
                   "--threads", "1") == 0
        monkeypatch.setenv("FDB_THREADS", "4")
        parallel = tmp_path / "m2"
        assert run("metrics", "--out", str(parallel), "--ref", str(ds), "--test", str(other)) == 0
        assert (serial / "metrics.csv").read_bytes() == (parallel / "metrics.csv").read_bytes()
        assert read_json(parallel / "run_manifest.json")["threads"] == 4
