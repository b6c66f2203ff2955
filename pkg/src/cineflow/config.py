"""JSON run configuration: defaults, strict validation, dataclass adapters.

Unknown keys are rejected (no silent typos); CLI flags override individual
values after the file is validated.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError
from .inference import InferenceConfig
from .training import JointConfig, LossWeights, PretrainConfig

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "threads": 1,
    "synth": {
        "n_subjects": 10,
        "n_heldout": 2,
        "n_atlas": 20,
        "t_n": 25,
        "n_slices": 9,
        "slice_spacing": 10.0,
        "samples_per_contour": 32,
        "n_lax": 2,
        "noise": 0.0,
        "ct_spacing": 1.0,
    },
    "edspace": {
        "k_alpha": 0,  # 0 = min(n_atlas - 1, 32)
        "canonical_radius": 0.9,
    },
    "pretrain": {
        "augment_count": 50,
        "augment_spread": 0.5,
        "epochs": 2000,
        "lr_net": 5e-4,
        "lr_codes": 1e-3,
        "code_dim": 256,
        "hidden": 512,
        "n_layers": 8,
        "skip_at": 4,
        "batch_shapes": 24,
        "points_per_shape": 96,
        "pool_surface": 3000,
        "pool_uniform": 800,
        "sigma_near": [0.05, 0.01],
        "code_reg_weight": 1e-4,
        "log_every": 100,
    },
    "train": {
        "epochs": 3000,
        "lr_motion": 1e-3,
        "lr_shape": 1e-4,
        "lr_codes": 1e-3,
        "motion_code_dim": 128,
        "motion_hidden": 256,
        "motion_layers": 6,
        "groups_per_step": 8,
        "points_per_group": 192,
        "pool_surface": 1200,
        "pool_uniform": 300,
        "sigma_near": [0.05, 0.01],
        "weight_sdf": 1.0,
        "weight_pointwise": 5e-3,
        "weight_pairwise": 1e-4,
        "weight_code_reg": 1e-4,
        "eps_pairwise": 0.5,
        "delta_huber": 0.05,
        "ed_identity_weight": 0.0,
        "motion_pca_energy": 0.95,
        "log_every": 100,
    },
    "infer": {
        "iters": 600,
        "lr": 5e-3,
        "lr_final_factor": 0.1,
        "points_per_iter": 2048,
        "weight_sdf": 1.0,
        "weight_pointwise": 5e-3,
        "weight_pairwise": 1e-4,
        "weight_code_reg": 1e-4,
        "use_deformation_regularizers": True,
        "eps_pairwise": 0.5,
        "delta_huber": 0.05,
        "rigid": False,
        "log_every": 50,
    },
    "reconstruct": {
        "grid_res": 96,
        "frame": "subject",  # subject | canonical
    },
    "eval": {
        "n_metric_points": 2000,
        "emd_subsample": 256,
        "mask_spacing": 1.0,
        "hd_percentile": 0.0,  # 0 = max Hausdorff
    },
}


def _check_keys(cfg, defaults, path=""):
    if not isinstance(cfg, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key, value in cfg.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            _check_keys(value, defaults[key], path + key + ".")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid with a JSON file and then explicit overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        _check_keys(user, DEFAULT_CONFIG)
        cfg = _merge(cfg, user)
    if overrides:
        _check_keys(overrides, DEFAULT_CONFIG)
        cfg = _merge(cfg, overrides)
    return cfg


def pretrain_config(cfg: dict) -> PretrainConfig:
    p = cfg["pretrain"]
    return PretrainConfig(
        epochs=p["epochs"],
        lr_net=p["lr_net"],
        lr_codes=p["lr_codes"],
        code_dim=p["code_dim"],
        hidden=p["hidden"],
        n_layers=p["n_layers"],
        skip_at=p["skip_at"],
        batch_shapes=p["batch_shapes"],
        points_per_shape=p["points_per_shape"],
        pool_surface=p["pool_surface"],
        pool_uniform=p["pool_uniform"],
        sigma_near=tuple(p["sigma_near"]),
        code_reg_weight=p["code_reg_weight"],
        log_every=p["log_every"],
    )


def joint_config(cfg: dict) -> JointConfig:
    t = cfg["train"]
    return JointConfig(
        epochs=t["epochs"],
        lr_motion=t["lr_motion"],
        lr_shape=t["lr_shape"],
        lr_codes=t["lr_codes"],
        motion_code_dim=t["motion_code_dim"],
        motion_hidden=t["motion_hidden"],
        motion_layers=t["motion_layers"],
        groups_per_step=t["groups_per_step"],
        points_per_group=t["points_per_group"],
        pool_surface=t["pool_surface"],
        pool_uniform=t["pool_uniform"],
        sigma_near=tuple(t["sigma_near"]),
        weights=LossWeights(
            sdf=t["weight_sdf"],
            pointwise=t["weight_pointwise"],
            pairwise=t["weight_pairwise"],
            code_reg=t["weight_code_reg"],
        ),
        eps_pairwise=t["eps_pairwise"],
        delta_huber=t["delta_huber"],
        ed_identity_weight=t["ed_identity_weight"],
        log_every=t["log_every"],
    )


def inference_config(cfg: dict) -> InferenceConfig:
    i = cfg["infer"]
    return InferenceConfig(
        iters=i["iters"],
        lr=i["lr"],
        lr_final_factor=i["lr_final_factor"],
        points_per_iter=i["points_per_iter"],
        weights=LossWeights(
            sdf=i["weight_sdf"],
            pointwise=i["weight_pointwise"],
            pairwise=i["weight_pairwise"],
            code_reg=i["weight_code_reg"],
        ),
        use_deformation_regularizers=i["use_deformation_regularizers"],
        eps_pairwise=i["eps_pairwise"],
        delta_huber=i["delta_huber"],
        log_every=i["log_every"],
    )
