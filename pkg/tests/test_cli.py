"""End-to-end CLI tests on a miniature configuration.

Networks and datasets are tiny here; the full-size pipeline is exercised by
the acceptance suite.
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cineflow.cli import main

TINY_CONFIG = {
    "seed": 11,
    "threads": 2,
    "synth": {
        "n_subjects": 2,
        "n_heldout": 1,
        "n_atlas": 4,
        "t_n": 5,
        "n_slices": 6,
        "samples_per_contour": 16,
        "n_lax": 0,
    },
    "edspace": {"k_alpha": 3},
    "pretrain": {
        "augment_count": 6,
        "epochs": 50,
        "code_dim": 16,
        "hidden": 32,
        "n_layers": 3,
        "skip_at": 0,
        "batch_shapes": 6,
        "points_per_shape": 32,
        "pool_surface": 200,
        "pool_uniform": 50,
        "log_every": 25,
    },
    "train": {
        "epochs": 40,
        "motion_code_dim": 8,
        "motion_hidden": 16,
        "motion_layers": 3,
        "groups_per_step": 4,
        "points_per_group": 32,
        "pool_surface": 150,
        "pool_uniform": 50,
        "log_every": 20,
    },
    "infer": {"iters": 25, "points_per_iter": 128, "log_every": 10},
    "reconstruct": {"grid_res": 24},
    "eval": {"n_metric_points": 200, "emd_subsample": 32, "mask_spacing": 2.0},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    return root, str(cfg_path)


@pytest.fixture(scope="module")
def pipeline(workdir):
    """Run the full pipeline once; individual tests inspect its artifacts."""
    root, cfg = workdir
    data = root / "data"
    ckpt = root / "ckpt.cflw"
    assert main(["synth", "--config", cfg, "--out", str(data)]) == 0
    assert main(["build-edspace", "--config", cfg, "--data", str(data), "--checkpoint", str(ckpt)]) == 0
    assert main(["pretrain", "--config", cfg, "--checkpoint", str(ckpt)]) == 0
    assert main(["train", "--config", cfg, "--data", str(data), "--checkpoint", str(ckpt)]) == 0
    infer_out = root / "inferred"
    assert (
        main(
            [
                "infer",
                "--config",
                cfg,
                "--checkpoint",
                str(ckpt),
                "--observations",
                str(data / "observations" / "heldout_000"),
                "--out",
                str(infer_out),
            ]
        )
        == 0
    )
    recon_out = root / "recon"
    assert (
        main(
            [
                "reconstruct",
                "--config",
                cfg,
                "--checkpoint",
                str(ckpt),
                "--codes",
                str(infer_out),
                "--out",
                str(recon_out),
            ]
        )
        == 0
    )
    return root, cfg, data, ckpt, infer_out, recon_out


class TestSynth:
    def test_outputs_exist(self, pipeline):
        root, cfg, data, *_ = pipeline
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["subjects"]) == 3
        assert (data / "atlas" / "atlas_003.obj").exists()
        assert (data / "subjects" / "train_000" / "phase_004.obj").exists()
        assert (data / "observations" / "heldout_000" / "points.txt").exists()
        assert (data / "observations_ct" / "heldout_000" / "points.txt").exists()

    def test_self_eval_is_perfect(self, pipeline, tmp_path):
        root, cfg, data, *_ = pipeline
        gt = data / "subjects" / "heldout_000"
        out = tmp_path / "selfeval"
        rc = main(
            [
                "eval",
                "--config",
                cfg,
                "--pred",
                str(gt),
                "--gt",
                str(gt),
                "--obs",
                str(data / "observations" / "heldout_000"),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["cd_mean"] == 0.0
        assert summary["emd_mean"] == 0.0
        assert summary["dice_mean"] == 1.0
        with open(out / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == TINY_CONFIG["synth"]["t_n"]
        assert all(float(r["cd"]) == 0.0 for r in rows)


class TestPipelineArtifacts:
    def test_checkpoint_is_complete(self, pipeline):
        *_, ckpt, infer_out, recon_out = pipeline
        from cineflow.checkpoint import load_checkpoint

        loaded = load_checkpoint(ckpt)
        assert loaded.missing == set()

    def test_reconstruction_outputs(self, pipeline):
        *_, recon_out = pipeline
        manifest = json.loads((recon_out / "reconstruction.json").read_text())
        assert len(manifest["phases"]) == TINY_CONFIG["synth"]["t_n"]
        for entry in manifest["phases"]:
            assert (recon_out / f"phase_{entry['phase']:03d}.obj").exists()
            assert "volume" in entry and "motion_code_norm" in entry

    def test_eval_pred_vs_gt_runs(self, pipeline, tmp_path):
        root, cfg, data, ckpt, infer_out, recon_out = pipeline
        out = tmp_path / "eval"
        rc = main(
            [
                "eval",
                "--config",
                cfg,
                "--pred",
                str(recon_out),
                "--gt",
                str(data / "subjects" / "heldout_000"),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert np.isfinite(summary["cd_mean"])

    def test_track_writes_trajectories(self, pipeline, tmp_path):
        root, cfg, data, ckpt, infer_out, _ = pipeline
        seeds_file = tmp_path / "seeds.txt"
        mesh_path = data / "subjects" / "heldout_000" / "phase_000.obj"
        from cineflow.geom.io import read_obj

        verts = read_obj(mesh_path).vertices[:5]
        seeds_file.write_text("\n".join(" ".join(f"{c:.9g}" for c in v) for v in verts))
        out = tmp_path / "tracks.csv"
        rc = main(
            [
                "track",
                "--config",
                cfg,
                "--checkpoint",
                str(ckpt),
                "--codes",
                str(infer_out),
                "--points",
                str(seeds_file),
                "--from-phase",
                "0",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 5 * TINY_CONFIG["synth"]["t_n"]

    def test_interpolate_completes_sequence(self, pipeline, tmp_path):
        root, cfg, data, ckpt, infer_out, _ = pipeline
        # infer on a phase subset, then complete via the motion PCA
        partial = tmp_path / "partial"
        rc = main(
            [
                "infer",
                "--config",
                cfg,
                "--checkpoint",
                str(ckpt),
                "--observations",
                str(data / "observations" / "heldout_000"),
                "--phases",
                "0,2",
                "--out",
                str(partial),
            ]
        )
        assert rc == 0
        completed = tmp_path / "completed"
        rc = main(
            [
                "interpolate",
                "--config",
                cfg,
                "--checkpoint",
                str(ckpt),
                "--codes",
                str(partial),
                "--two-phase",
                "--es-phase",
                "2",
                "--out",
                str(completed),
            ]
        )
        assert rc == 0
        from cineflow.cli import _load_codes

        result, _, meta = _load_codes(completed / "codes.cflw")
        assert sorted(result.motion_codes) == list(range(TINY_CONFIG["synth"]["t_n"]))
        assert meta["interpolated"]


class TestErrorHandling:
    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"sede": 3}))
        rc = main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"
        assert "sede" in err["message"]

    def test_missing_models_reported(self, tmp_path, capsys):
        from cineflow.checkpoint import Checkpoint, save_checkpoint

        ckpt = tmp_path / "empty.cflw"
        save_checkpoint(ckpt, Checkpoint(config={"seed": 0}))
        rc = main(
            [
                "infer",
                "--checkpoint",
                str(ckpt),
                "--observations",
                str(tmp_path),
                "--out",
                str(tmp_path / "o"),
            ]
        )
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert "train" in err["message"]


class TestGradcheckCommand:
    def test_passes_at_small_size(self, tmp_path, capsys):
        cfg = dict(TINY_CONFIG)
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(TINY_CONFIG))
        rc = main(["gradcheck", "--config", str(cfg_path), "--n-tuples", "3"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert report["passed"]
        assert report["max_rel_error"] < 1e-5

    def test_injected_fault_is_caught(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(TINY_CONFIG))
        rc = main(
            [
                "gradcheck",
                "--config",
                str(cfg_path),
                "--n-tuples",
                "3",
                "--inject-gradient-fault",
            ]
        )
        assert rc == 1
