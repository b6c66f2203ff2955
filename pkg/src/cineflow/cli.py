"""Command-line surface: one binary, subcommands covering the full pipeline.

    synth          generate the synthetic dataset and observations
    build-edspace  atlas -> statistical shape space + canonical frame
    pretrain       shape-model pre-training on the augmented ED-space
    train          joint motion + shape training
    infer          latent-code inference from slice observations
    reconstruct    per-phase mesh extraction from inferred codes
    track          dense point trajectories (CSV)
    interpolate    motion-code PCA completion (keyframe or two-phase mode)
    eval           metric suite (CSV + JSON summary)
    gradcheck      finite-difference gradient audit

All commands take ``--config`` (JSON, validated against the documented
schema; unknown keys rejected) plus a few direct flags that override config
values. Outputs are written atomically. ``--threads 1`` makes runs
bit-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import synthdata
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import inference_config, joint_config, load_config, pretrain_config
from .diffcore import grad_check
from .edspace import NormalizationSpec, augment, build_ssm, normalize
from .errors import CineflowError, ConfigError
from .geom import TriMesh, apply_transform
from .geom.io import read_obj, write_obj
from .inference import (
    InferenceResult,
    build_motion_pca,
    infer_codes,
    interpolate_motion,
    interpolate_two_phase,
    reconstruct_phase,
    register_observation,
    track_points,
)
from .metrics import chamfer, dice_hausdorff, emd, rasterize_cross_section, volume_curve
from .models import MotionNet, ShapeNet, composed_forward, composed_backward, composed_sdf
from .observations import SliceObservation
from .seeds import substream
from .training import TrainingSequence, pretrain_shape, train_joint
from .geom import sample_surface


def _set_threads(n: int):
    if n and n > 0:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=n)
        except ImportError:
            import os

            os.environ["OMP_NUM_THREADS"] = str(n)
            os.environ["OPENBLAS_NUM_THREADS"] = str(n)


def _emit(rec: dict):
    print(json.dumps(rec, sort_keys=True), flush=True)


def _write_json(path, obj):
    from .geom.io import _atomic_write_text

    _atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True))


def _write_csv(path, header: list[str], rows: list[list]):
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    from .geom.io import _atomic_write_text

    _atomic_write_text(path, buf.getvalue())


def _load_full_config(args) -> dict:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    if getattr(args, "grid_res", None) is not None:
        overrides.setdefault("reconstruct", {})["grid_res"] = args.grid_res
    if getattr(args, "rigid", False):
        overrides.setdefault("infer", {})["rigid"] = True
    cfg = load_config(getattr(args, "config", None), overrides)
    _set_threads(cfg["threads"])
    return cfg


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_full_config(args)
    s = cfg["synth"]
    seed = cfg["seed"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    atlas = synthdata.make_atlas(s["n_atlas"], seed, t_n=s["t_n"])
    atlas_dir = out / "atlas"
    atlas_dir.mkdir(exist_ok=True)
    atlas_files = []
    for i, mesh in enumerate(atlas.shapes):
        name = f"atlas_{i:03d}.obj"
        write_obj(atlas_dir / name, mesh)
        atlas_files.append(name)
    _write_json(atlas_dir / "index.json", {"shapes": atlas_files})

    manifest = {"seed": seed, "t_n": s["t_n"], "n_atlas": s["n_atlas"], "subjects": []}
    for tag, count in (("train", s["n_subjects"]), ("heldout", s["n_heldout"])):
        for seq in synthdata.make_dataset(count, seed, t_n=s["t_n"], tag=tag):
            subj_dir = out / "subjects" / seq.subject_id
            subj_dir.mkdir(parents=True, exist_ok=True)
            for p, mesh in enumerate(seq.meshes):
                write_obj(subj_dir / f"phase_{p:03d}.obj", mesh)
            obs = synthdata.make_cmr_observations(
                seq,
                n_slices=s["n_slices"],
                spacing=s["slice_spacing"],
                samples_per_contour=s["samples_per_contour"],
                n_lax=s["n_lax"],
                noise=s["noise"],
                seed=seed,
            )
            obs.save(out / "observations" / seq.subject_id)
            if tag == "heldout":
                ct = synthdata.make_ct_observations(
                    seq,
                    spacing=s["ct_spacing"],
                    samples_per_contour=s["samples_per_contour"],
                    noise=s["noise"],
                    seed=seed,
                )
                ct.save(out / "observations_ct" / seq.subject_id)
            vols = volume_curve(seq.meshes)
            manifest["subjects"].append(
                {
                    "id": seq.subject_id,
                    "split": tag,
                    "es_index": seq.es_index,
                    "t_n": seq.t_n,
                    "volume_ed": float(vols[0]),
                    "volume_es": float(vols.min()),
                }
            )
    _write_json(out / "manifest.json", manifest)
    _emit({"event": "synth-done", "out": str(out), "subjects": len(manifest["subjects"])})
    return 0


# -- build-edspace ----------------------------------------------------------------


def _load_atlas(data_dir: Path):
    from .edspace import Atlas

    atlas_dir = data_dir / "atlas"
    index = atlas_dir / "index.json"
    if index.exists():
        paths = [atlas_dir / name for name in json.loads(index.read_text())["shapes"]]
    else:
        paths = sorted(atlas_dir.glob("atlas_*.obj"))
    if not paths:
        raise CineflowError(f"no atlas meshes under {atlas_dir}")
    return Atlas([read_obj(p) for p in paths])


def cmd_build_edspace(args) -> int:
    cfg = _load_full_config(args)
    atlas = _load_atlas(Path(args.data))
    k_alpha = cfg["edspace"]["k_alpha"] or None
    ssm = build_ssm(atlas, k_alpha=k_alpha)
    spec = NormalizationSpec.from_mean_shape(ssm, radius=cfg["edspace"]["canonical_radius"])
    ckpt = Checkpoint(ssm=ssm, normalization=spec, config=cfg)
    save_checkpoint(args.checkpoint, ckpt)
    _emit({"event": "edspace-done", "k_alpha": ssm.k_alpha, "checkpoint": args.checkpoint})
    return 0


# -- pretrain ---------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = _load_full_config(args)
    seed = cfg["seed"]
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.ssm is None or ckpt.normalization is None:
        raise CineflowError("checkpoint lacks the ED-space; run build-edspace first")
    p = cfg["pretrain"]
    alphas = augment(ckpt.ssm, p["augment_count"], p["augment_spread"], substream(seed, "augment"))
    shapes = [normalize(ckpt.ssm.sample_shape(a), ckpt.normalization) for a in alphas]
    net, codes, trace = pretrain_shape(shapes, pretrain_config(cfg), seed, emit=_emit)
    ckpt.shape_net = net
    ckpt.config = cfg
    save_checkpoint(args.out or args.checkpoint, ckpt)
    _emit({"event": "pretrain-done", "final_loss": trace.records[-1]["loss"]})
    return 0


# -- train ------------------------------------------------------------------------


def _load_sequences(data_dir: Path, spec, split: str):
    manifest = json.loads((data_dir / "manifest.json").read_text())
    sequences = []
    for entry in manifest["subjects"]:
        if entry["split"] != split:
            continue
        subj_dir = data_dir / "subjects" / entry["id"]
        meshes = [
            normalize(read_obj(subj_dir / f"phase_{p:03d}.obj"), spec)
            for p in range(entry["t_n"])
        ]
        sequences.append(TrainingSequence(entry["id"], meshes))
    return sequences


def cmd_train(args) -> int:
    cfg = _load_full_config(args)
    seed = cfg["seed"]
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.shape_net is None:
        raise CineflowError("checkpoint lacks a pre-trained shape model; run pretrain first")
    sequences = _load_sequences(Path(args.data), ckpt.normalization, "train")
    if not sequences:
        raise CineflowError("no training sequences found")
    motion_net, shape_net, table, trace = train_joint(
        sequences, ckpt.shape_net, joint_config(cfg), seed, emit=_emit
    )
    ckpt.motion_net = motion_net
    ckpt.shape_net = shape_net
    ckpt.code_table = table
    if len(table.subjects()) >= 2:
        ckpt.motion_pca = build_motion_pca(table, energy=cfg["train"]["motion_pca_energy"])
    ckpt.config = cfg
    save_checkpoint(args.out or args.checkpoint, ckpt)
    _emit({"event": "train-done", "final_loss": trace.records[-1]["loss"]})
    return 0


# -- infer ------------------------------------------------------------------------


def _require_models(ckpt: Checkpoint):
    if ckpt.shape_net is None or ckpt.motion_net is None or ckpt.normalization is None:
        raise CineflowError("checkpoint lacks trained models; run train first")


def _canonical_mean_mesh(ckpt: Checkpoint) -> TriMesh:
    return normalize(ckpt.ssm.mean_mesh(), ckpt.normalization)


def _save_codes(path, result: InferenceResult, transform, meta_extra=None):
    from .checkpoint import _KIND_ARRAYS, _KIND_JSON, _pack_arrays, _write_container

    phases = sorted(result.motion_codes)
    arrays = {
        "shape_code": result.shape_code,
        "motion_codes": np.stack([result.motion_codes[p] for p in phases]),
        "phases": np.asarray(phases, dtype=np.int64),
        "transform": transform.matrix,
    }
    meta = {"t_n": result.t_n}
    meta.update(meta_extra or {})
    _write_container(
        path,
        [
            ("codes.meta", _KIND_JSON, json.dumps(meta, sort_keys=True).encode()),
            ("codes.arrays", _KIND_ARRAYS, _pack_arrays(arrays)),
        ],
    )


def _load_codes(path):
    from .checkpoint import _read_container, _unpack_arrays

    sections = _read_container(path)
    meta = json.loads(sections["codes.meta"][1].decode())
    arrays = _unpack_arrays(sections["codes.arrays"][1])
    phases = [int(p) for p in arrays["phases"]]
    result = InferenceResult(
        shape_code=arrays["shape_code"],
        motion_codes={p: arrays["motion_codes"][i] for i, p in enumerate(phases)},
        trace=None,
        t_n=meta["t_n"],
    )
    from .geom import SimilarityTransform

    return result, SimilarityTransform(arrays["transform"]), meta


def cmd_infer(args) -> int:
    cfg = _load_full_config(args)
    seed = cfg["seed"]
    ckpt = load_checkpoint(args.checkpoint)
    _require_models(ckpt)
    obs = SliceObservation.load(args.observations)
    if args.phases:
        keep = {int(p) for p in args.phases.split(",")}
        obs = SliceObservation([r for r in obs.records if r.phase in keep], obs.t_n)
    obs_norm, transform = register_observation(
        obs, _canonical_mean_mesh(ckpt), with_scale=not cfg["infer"]["rigid"]
    )
    result = infer_codes(
        obs_norm, ckpt.shape_net, ckpt.motion_net, inference_config(cfg), seed, emit=_emit
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_codes(out / "codes.cflw", result, transform)
    _write_json(
        out / "inference.json",
        {
            "phases": sorted(result.motion_codes),
            "t_n": result.t_n,
            "final_loss": result.trace.records[-1]["loss"] if result.trace.records else None,
            "shape_code_norm": float(np.linalg.norm(result.shape_code)),
        },
    )
    _emit({"event": "infer-done", "out": str(out)})
    return 0


# -- reconstruct --------------------------------------------------------------------


def cmd_reconstruct(args) -> int:
    cfg = _load_full_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    _require_models(ckpt)
    result, transform, _ = _load_codes(Path(args.codes) / "codes.cflw")
    grid_res = cfg["reconstruct"]["grid_res"]
    frame = cfg["reconstruct"]["frame"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for phase in sorted(result.motion_codes):
        tau = phase / result.t_n
        mesh = reconstruct_phase(
            ckpt.shape_net,
            ckpt.motion_net,
            result.shape_code,
            result.motion_codes[phase],
            tau,
            grid_res=grid_res,
        )
        if frame == "subject" and len(mesh.vertices):
            mesh = apply_transform(transform.inverse(), mesh)
        write_obj(out / f"phase_{phase:03d}.obj", mesh)
        vol = mesh.signed_volume() if len(mesh.faces) else 0.0
        manifest.append(
            {
                "phase": phase,
                "tau": tau,
                "volume": vol,
                "shape_code_norm": float(np.linalg.norm(result.shape_code)),
                "motion_code_norm": float(np.linalg.norm(result.motion_codes[phase])),
                "empty": len(mesh.faces) == 0,
            }
        )
        _emit({"event": "reconstructed", "phase": phase, "volume": vol})
    _write_json(out / "reconstruction.json", {"frame": frame, "grid_res": grid_res, "phases": manifest})
    return 0


# -- track ---------------------------------------------------------------------------


def cmd_track(args) -> int:
    cfg = _load_full_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    _require_models(ckpt)
    result, transform, _ = _load_codes(Path(args.codes) / "codes.cflw")
    from .geom.io import read_points_txt

    cloud = read_points_txt(args.points)  # seed points arrive in the subject frame
    canonical = transform.apply_points(cloud.points)
    src_phase = args.from_phase
    if src_phase not in result.motion_codes:
        raise CineflowError(f"no motion code for source phase {src_phase}")
    rows = []
    inv = transform.inverse()
    for phase in sorted(result.motion_codes):
        res = track_points(
            ckpt.motion_net,
            canonical,
            result.motion_codes[src_phase],
            src_phase / result.t_n,
            result.motion_codes[phase],
            phase / result.t_n,
        )
        back = inv.apply_points(res.points)
        for i, (p, r, ok) in enumerate(zip(back, res.residual, res.converged)):
            rows.append([i, phase, p[0], p[1], p[2], r, int(ok)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["point_id", "phase", "x", "y", "z", "residual", "converged"], rows)
    _emit({"event": "track-done", "out": str(out), "n_points": len(cloud.points)})
    return 0


# -- interpolate ------------------------------------------------------------------------


def cmd_interpolate(args) -> int:
    cfg = _load_full_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    _require_models(ckpt)
    if ckpt.motion_pca is None:
        raise CineflowError("checkpoint lacks a motion PCA; re-run train")
    result, transform, _ = _load_codes(Path(args.codes) / "codes.cflw")
    observed = [(p, result.motion_codes[p]) for p in sorted(result.motion_codes)]
    if args.two_phase:
        es = args.es_phase
        if es is None:
            raise ConfigError("--two-phase requires --es-phase")
        code_es = result.motion_codes.get(es)
        full, meta = interpolate_two_phase(ckpt.motion_pca, result.motion_codes[0], code_es, es)
    else:
        full, meta = interpolate_motion(ckpt.motion_pca, observed, strict_paper=args.strict_paper)
    completed = InferenceResult(
        shape_code=result.shape_code,
        motion_codes={p: full[p] for p in range(ckpt.motion_pca.t_n)},
        trace=None,
        t_n=ckpt.motion_pca.t_n,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_codes(
        out / "codes.cflw",
        completed,
        transform,
        meta_extra={
            "interpolated": True,
            "observed_phases": sorted(result.motion_codes),
            "rank_deficient": meta["rank_deficient"],
            "low_confidence": meta["low_confidence"],
        },
    )
    _emit({"event": "interpolate-done", "observed": len(observed), "out": str(out)})
    return 0


# -- eval --------------------------------------------------------------------------------


def _mesh_metric_points(mesh: TriMesh, n: int, seed: int, tag: str):
    return sample_surface(mesh, n, substream(seed, "eval-points", tag))


def cmd_eval(args) -> int:
    cfg = _load_full_config(args)
    e = cfg["eval"]
    seed = cfg["seed"]
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    pred_files = sorted(pred_dir.glob("phase_*.obj"))
    if not pred_files:
        raise CineflowError(f"no phase_*.obj under {pred_dir}")
    obs = SliceObservation.load(args.obs) if args.obs else None
    hd_pct = e["hd_percentile"] or None
    rows = []
    for pf in pred_files:
        phase = int(pf.stem.split("_")[1])
        gf = gt_dir / pf.name
        if not gf.exists():
            continue
        pred = read_obj(pf)
        gt = read_obj(gf)
        # one sample stream per phase for both sides: identical meshes then
        # sample identical points, so self-evaluation is exactly zero
        p_pts = _mesh_metric_points(pred, e["n_metric_points"], seed, str(phase))
        g_pts = _mesh_metric_points(gt, e["n_metric_points"], seed, str(phase))
        cd = chamfer(p_pts, g_pts)
        emd_val = emd(p_pts, g_pts, n_sub=e["emd_subsample"], seed=seed)
        vol = pred.signed_volume() if pred.is_watertight() else float("nan")
        dice_val = hd_val = float("nan")
        if obs is not None:
            recs = [r for r in obs.records if r.phase == phase]
            if recs:
                dices, hds = [], []
                for r in recs:
                    mask = rasterize_cross_section(gt, r.origin, r.normal, e["mask_spacing"])
                    if mask is None:
                        continue
                    d, h = dice_hausdorff(pred, mask, r.origin, r.normal, hd_percentile=hd_pct)
                    dices.append(d)
                    hds.append(h)
                if dices:
                    dice_val = float(np.mean(dices))
                    hd_val = float(np.max(hds))
        rows.append([args.subject or pred_dir.name, phase, cd, emd_val, dice_val, hd_val, vol])
        _emit({"event": "eval-phase", "phase": phase, "cd": cd, "emd": emd_val})
    if not rows:
        raise CineflowError(f"no common phases between {pred_dir} and {gt_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "metrics.csv", ["subject", "phase", "cd", "emd", "dice", "hd", "volume"], rows
    )
    arr = np.array([[r[2], r[3]] for r in rows], dtype=float)
    vols = np.array([r[6] for r in rows], dtype=float)
    summary = {
        "n_phases": len(rows),
        "cd_mean": float(arr[:, 0].mean()),
        "cd_max": float(arr[:, 0].max()),
        "emd_mean": float(arr[:, 1].mean()),
        "volume_min": float(np.nanmin(vols)) if len(vols) else None,
        "volume_max": float(np.nanmax(vols)) if len(vols) else None,
        "ejection_fraction": (
            float((np.nanmax(vols) - np.nanmin(vols)) / np.nanmax(vols)) if len(vols) else None
        ),
    }
    dice_vals = [r[4] for r in rows if not np.isnan(r[4])]
    if dice_vals:
        summary["dice_mean"] = float(np.mean(dice_vals))
        summary["hd_max"] = float(np.nanmax([r[5] for r in rows]))
    _write_json(out / "summary.json", summary)
    _emit({"event": "eval-done", **summary})
    return 0


# -- gradcheck ----------------------------------------------------------------------------


def run_gradcheck(
    n_tuples: int = 50,
    seed: int = 0,
    shape_dims=(256, 512, 8, 4),
    motion_dims=(128, 256, 6),
    inject_fault: bool = False,
    h: float = 1e-5,
) -> dict:
    """Finite-difference audit of shape, motion, and composed gradients.

    Checks gradients w.r.t. both codes and the query point at random
    (code, point, tau) tuples; returns the worst relative error per model.
    ``inject_fault`` corrupts one analytic gradient component as a negative
    control, which must trip the threshold.
    """
    rng = substream(seed, "gradcheck")
    ks, hidden_s, layers_s, skip_s = shape_dims
    km, hidden_m, layers_m = motion_dims
    shape_net = ShapeNet.create(rng, code_dim=ks, hidden=hidden_s, n_layers=layers_s, skip_at=skip_s)
    motion_net = MotionNet.create(rng, code_dim=km, hidden=hidden_m, n_layers=layers_m)
    for layer in motion_net.net.layers:  # zero-init motion has no gradient signal
        layer.weight = layer.weight + rng.normal(0, 0.05, layer.weight.shape)
        layer.bias = layer.bias + rng.normal(0, 0.02, layer.bias.shape)

    worst = {"shape": 0.0, "motion": 0.0, "composed": 0.0}
    excluded = 0
    for t in range(n_tuples):
        c_s = rng.normal(0, 0.1, ks)
        c_m = rng.normal(0, 0.1, km)
        x = rng.uniform(-0.8, 0.8, 3)
        tau = float(rng.uniform(0, 1))
        probe = rng.normal(size=3)
        fault = inject_fault and t == n_tuples // 2

        def f_shape(theta):
            code, pt = theta[:ks], theta[ks:]
            val, cache = shape_net.forward_cached(code, pt[None, :])
            _, d_code, d_pt = shape_net.backward(cache, np.ones(1), with_param_grads=False)
            grad = np.concatenate([d_code[0], d_pt[0]])
            if fault:
                grad[0] += 0.5
            return float(val[0]), grad

        def fb_shape(thetas):
            return shape_net.forward(thetas[:, :ks], thetas[:, ks:])

        res = grad_check(f_shape, np.concatenate([c_s, x]), h=h, f_batch=fb_shape)
        worst["shape"] = max(worst["shape"], res.max_rel_error)
        excluded += res.n_excluded

        def f_motion(theta):
            code, pt = theta[:km], theta[km:]
            v, cache = motion_net.forward_cached(code, pt[None, :], tau)
            _, d_code, d_pt = motion_net.backward(cache, probe[None, :], with_param_grads=False)
            return float(v[0] @ probe), np.concatenate([d_code[0], d_pt[0]])

        def fb_motion(thetas):
            return motion_net.forward(thetas[:, :km], thetas[:, km:], tau) @ probe

        res = grad_check(f_motion, np.concatenate([c_m, x]), h=h, f_batch=fb_motion)
        worst["motion"] = max(worst["motion"], res.max_rel_error)
        excluded += res.n_excluded

        def f_comp(theta):
            cs, cm, pt = theta[:ks], theta[ks : ks + km], theta[ks + km :]
            sdf, cache = composed_forward(shape_net, motion_net, cs, cm, pt[None, :], tau)
            g = composed_backward(shape_net, motion_net, cache, np.ones(1), with_param_grads=False)
            return float(sdf[0]), np.concatenate([g.d_code_shape[0], g.d_code_motion[0], g.d_points[0]])

        def fb_comp(thetas):
            return composed_sdf(
                shape_net, motion_net, thetas[:, :ks], thetas[:, ks : ks + km], thetas[:, ks + km :], tau
            )

        res = grad_check(f_comp, np.concatenate([c_s, c_m, x]), h=h, f_batch=fb_comp)
        worst["composed"] = max(worst["composed"], res.max_rel_error)
        excluded += res.n_excluded

    worst_overall = max(worst.values())
    return {
        "n_tuples": n_tuples,
        "max_rel_error": worst_overall,
        "per_model": worst,
        "excluded_kink_coords": excluded,
        "threshold": 1e-5,
        "passed": bool(worst_overall < 1e-5),
    }


def cmd_gradcheck(args) -> int:
    cfg = _load_full_config(args)
    t0 = time.perf_counter()
    report = run_gradcheck(
        n_tuples=args.n_tuples,
        seed=cfg["seed"],
        shape_dims=(
            cfg["pretrain"]["code_dim"],
            cfg["pretrain"]["hidden"],
            cfg["pretrain"]["n_layers"],
            cfg["pretrain"]["skip_at"],
        ),
        motion_dims=(
            cfg["train"]["motion_code_dim"],
            cfg["train"]["motion_hidden"],
            cfg["train"]["motion_layers"],
        ),
        inject_fault=args.inject_gradient_fault,
    )
    report["runtime_s"] = time.perf_counter() - t0
    _emit(report)
    return 0 if report["passed"] else 1


# -- wiring ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cineflow",
        description="4D myocardium reconstruction from sparse slice contours",
    )
    parser.add_argument("--version", action="version", version=f"cineflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, out=None):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--threads", type=int, help="BLAS thread cap (1 = bit-deterministic)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="CFLW checkpoint path")
        if out is not None:
            p.add_argument("--out", required=out == "required", help="output path")

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    common(p, out="required")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-edspace", help="build the statistical shape space")
    common(p, checkpoint=True)
    p.add_argument("--data", required=True, help="synth output directory")
    p.set_defaults(func=cmd_build_edspace)

    p = sub.add_parser("pretrain", help="pre-train the shape model")
    common(p, checkpoint=True, out="optional")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="joint motion + shape training")
    common(p, checkpoint=True, out="optional")
    p.add_argument("--data", required=True, help="synth output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="latent-code inference from observations")
    common(p, checkpoint=True, out="required")
    p.add_argument("--observations", required=True, help="observation directory")
    p.add_argument("--phases", help="comma-separated phase subset to observe")
    p.add_argument("--rigid", action="store_true", help="registration without scale")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("reconstruct", help="extract per-phase meshes")
    common(p, checkpoint=True, out="required")
    p.add_argument("--codes", required=True, help="infer/interpolate output directory")
    p.add_argument("--grid-res", type=int, help="marching-cubes grid resolution")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("track", help="dense point trajectories (CSV)")
    common(p, checkpoint=True, out="required")
    p.add_argument("--codes", required=True)
    p.add_argument("--points", required=True, help="seed points (text, subject frame)")
    p.add_argument("--from-phase", type=int, default=0)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("interpolate", help="motion-code PCA completion")
    common(p, checkpoint=True, out="required")
    p.add_argument("--codes", required=True, help="inferred codes of the observed phases")
    p.add_argument("--two-phase", action="store_true", help="CT mode: ED + ES only")
    p.add_argument("--es-phase", type=int, help="ES phase index for --two-phase")
    p.add_argument("--strict-paper", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="metric suite")
    common(p, out="required")
    p.add_argument("--pred", required=True, help="directory of predicted phase_*.obj")
    p.add_argument("--gt", required=True, help="directory of ground-truth phase_*.obj")
    p.add_argument("--obs", help="observation directory (enables Dice/HD)")
    p.add_argument("--subject", help="subject label for the CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.add_argument("--n-tuples", type=int, default=50)
    p.add_argument("--inject-gradient-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CineflowError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
