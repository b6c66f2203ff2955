"""The two implicit networks and their latent codes.

The shape network maps (shape code, canonical point) to a signed distance;
the motion network maps (phase indicator, point, motion code) to the
displacement that carries the point into the end-diastolic frame. Their
composition evaluates the SDF of any phase, and its hand-chained backward
pass propagates gradients to both networks, both codes, and the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import DenseNet
from .errors import ShapeMismatchError

K_SHAPE = 256
K_MOTION = 128
SHAPE_HIDDEN = 512
SHAPE_LAYERS = 8
SHAPE_SKIP_AT = 4
MOTION_HIDDEN = 256
MOTION_LAYERS = 6


def phase_tau(phase: int, t_n: int) -> float:
    """Normalized phase indicator T_i / T_N in [0, 1]; 0 is ED."""
    tau = phase / t_n
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"phase {phase} outside the cycle of length {t_n}")
    return tau


def _broadcast_codes(codes: np.ndarray, n: int, dim: int, what: str) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim == 1:
        if codes.size != dim:
            raise ShapeMismatchError(f"{what} has length {codes.size}, expected {dim}")
        return np.broadcast_to(codes, (n, dim))
    if codes.shape != (n, dim):
        raise ShapeMismatchError(f"{what} batch shape {codes.shape} != ({n}, {dim})")
    return codes


class ShapeNet:
    """Implicit SDF decoder f_s(code, x) -> sdf over the canonical frame.

    8 relu layers of width 512 with the (code, x) input concatenated back in
    at layer 4; identity output. The final layer starts near the SDF of a
    centered sphere so early training sees a sane field.
    """

    def __init__(self, net: DenseNet, code_dim: int = K_SHAPE):
        self.net = net
        self.code_dim = code_dim
        if net.in_dim != code_dim + 3 or net.out_dim != 1:
            raise ShapeMismatchError("shape net must map code_dim + 3 -> 1")

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        code_dim: int = K_SHAPE,
        hidden: int = SHAPE_HIDDEN,
        n_layers: int = SHAPE_LAYERS,
        skip_at: int = SHAPE_SKIP_AT,
        init_radius: float | None = 0.5,
    ) -> "ShapeNet":
        dims = [code_dim + 3] + [hidden] * (n_layers - 1) + [1]
        skips = ((0, skip_at),) if 0 < skip_at < n_layers else ()
        net = DenseNet.create(dims, rng, skips=skips, geometric_init_last=init_radius)
        return cls(net, code_dim)

    def _pack(self, codes, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        codes = _broadcast_codes(codes, len(points), self.code_dim, "shape code")
        return np.concatenate([codes, points], axis=1)

    def forward(self, codes, points) -> np.ndarray:
        return self.net.forward(self._pack(codes, points))[:, 0]

    def forward_cached(self, codes, points):
        out, cache = self.net.forward_cached(self._pack(codes, points))
        return out[:, 0], cache

    def backward(self, cache, upstream: np.ndarray, with_param_grads: bool = True):
        """Returns (param_grads, d_code (B,K), d_points (B,3))."""
        param_grads, d_in = self.net.backward(
            cache, np.asarray(upstream, dtype=np.float64)[:, None], with_param_grads
        )
        return param_grads, d_in[:, : self.code_dim], d_in[:, self.code_dim :]


class MotionNet:
    """Deformation decoder f_m(tau, x, code) -> displacement to the ED frame.

    6 relu layers of width 256, identity output. The final layer is
    zero-initialized so training starts from the identity deformation and
    the pre-trained shape model is immediately meaningful.
    """

    def __init__(self, net: DenseNet, code_dim: int = K_MOTION):
        self.net = net
        self.code_dim = code_dim
        if net.in_dim != 1 + 3 + code_dim or net.out_dim != 3:
            raise ShapeMismatchError("motion net must map 1 + 3 + code_dim -> 3")

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        code_dim: int = K_MOTION,
        hidden: int = MOTION_HIDDEN,
        n_layers: int = MOTION_LAYERS,
    ) -> "MotionNet":
        dims = [1 + 3 + code_dim] + [hidden] * (n_layers - 1) + [3]
        net = DenseNet.create(dims, rng, zero_init_last=True)
        return cls(net, code_dim)

    def _pack(self, codes, points, tau):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(points)
        codes = _broadcast_codes(codes, n, self.code_dim, "motion code")
        tau_col = np.broadcast_to(np.asarray(tau, dtype=np.float64).reshape(-1, 1), (n, 1))
        return np.concatenate([tau_col, points, codes], axis=1)

    def forward(self, codes, points, tau) -> np.ndarray:
        return self.net.forward(self._pack(codes, points, tau))

    def forward_cached(self, codes, points, tau):
        return self.net.forward_cached(self._pack(codes, points, tau))

    def backward(self, cache, upstream: np.ndarray, with_param_grads: bool = True):
        """Returns (param_grads, d_code (B,K), d_points (B,3))."""
        param_grads, d_in = self.net.backward(cache, upstream, with_param_grads)
        return param_grads, d_in[:, 4:], d_in[:, 1:4]


def deform_to_ed(motion_net: MotionNet, codes, points, tau) -> np.ndarray:
    """x' = x + v: carry phase-tau points into the ED frame."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return points + motion_net.forward(codes, points, tau)


@dataclass
class ComposedCache:
    motion_cache: object
    shape_cache: object
    points: np.ndarray
    deformed: np.ndarray
    velocity: np.ndarray


def composed_sdf(shape_net: ShapeNet, motion_net: MotionNet, c_s, c_m, points, tau) -> np.ndarray:
    """f_s(c_s, x + f_m(tau, x, c_m)): the SDF of the phase-tau shape."""
    return shape_net.forward(c_s, deform_to_ed(motion_net, c_m, points, tau))


def composed_forward(shape_net, motion_net, c_s, c_m, points, tau):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v, motion_cache = motion_net.forward_cached(c_m, points, tau)
    deformed = points + v
    sdf, shape_cache = shape_net.forward_cached(c_s, deformed)
    return sdf, ComposedCache(motion_cache, shape_cache, points, deformed, v)


@dataclass
class ComposedGrads:
    shape_params: list | None
    motion_params: list | None
    d_code_shape: np.ndarray  # (B, Ks)
    d_code_motion: np.ndarray  # (B, Km)
    d_points: np.ndarray  # (B, 3)


def composed_backward(
    shape_net: ShapeNet,
    motion_net: MotionNet,
    cache: ComposedCache,
    upstream_sdf: np.ndarray,
    upstream_velocity: np.ndarray | None = None,
    with_param_grads: bool = True,
) -> ComposedGrads:
    """Chain gradients through shape and motion networks.

    upstream_sdf is dL/d(sdf) per point; upstream_velocity optionally adds
    dL/dv contributions that bypass the shape network (the deformation
    regularizers).
    """
    shape_grads, d_cs, d_deformed = shape_net.backward(
        cache.shape_cache, upstream_sdf, with_param_grads
    )
    up_v = d_deformed if upstream_velocity is None else d_deformed + upstream_velocity
    motion_grads, d_cm, d_pts_motion = motion_net.backward(
        cache.motion_cache, up_v, with_param_grads
    )
    # x' = x + v: the point feeds both the motion net and the deformed output
    d_points = d_deformed + d_pts_motion
    return ComposedGrads(shape_grads, motion_grads, d_cs, d_cm, d_points)


class CodeTable:
    """Latent codes: one shape code per subject, one motion code per phase."""

    def __init__(self, shape_dim: int = K_SHAPE, motion_dim: int = K_MOTION):
        self.shape_dim = shape_dim
        self.motion_dim = motion_dim
        self.shape_codes: dict[str, np.ndarray] = {}
        self.motion_codes: dict[tuple[str, int], np.ndarray] = {}

    def add_shape_code(self, subject: str, code: np.ndarray):
        if subject in self.shape_codes:
            raise ValueError(f"subject {subject!r} already has a shape code (one per sequence)")
        code = np.asarray(code, dtype=np.float64).ravel()
        if code.size != self.shape_dim:
            raise ShapeMismatchError(f"shape code length {code.size} != {self.shape_dim}")
        self.shape_codes[subject] = code

    def add_motion_code(self, subject: str, phase: int, code: np.ndarray):
        key = (subject, int(phase))
        if key in self.motion_codes:
            raise ValueError(f"{key} already has a motion code")
        code = np.asarray(code, dtype=np.float64).ravel()
        if code.size != self.motion_dim:
            raise ShapeMismatchError(f"motion code length {code.size} != {self.motion_dim}")
        self.motion_codes[key] = code

    def shape_code(self, subject: str) -> np.ndarray:
        return self.shape_codes[subject]

    def motion_code(self, subject: str, phase: int) -> np.ndarray:
        return self.motion_codes[(subject, int(phase))]

    def subjects(self) -> list[str]:
        return sorted(self.shape_codes)

    def phases(self, subject: str) -> list[int]:
        return sorted(p for (s, p) in self.motion_codes if s == subject)

    def motion_matrix(self, subject: str) -> np.ndarray:
        """(T, Km) motion codes of one subject in phase order."""
        return np.stack([self.motion_codes[(subject, p)] for p in self.phases(subject)])

    @classmethod
    def init_random(
        cls,
        subjects: list[str],
        t_n: int,
        rng: np.random.Generator,
        shape_dim: int = K_SHAPE,
        motion_dim: int = K_MOTION,
        std: float = 0.01,
    ) -> "CodeTable":
        table = cls(shape_dim, motion_dim)
        for s in subjects:
            table.add_shape_code(s, rng.normal(0.0, std, size=shape_dim))
            for p in range(t_n):
                table.add_motion_code(s, p, rng.normal(0.0, std, size=motion_dim))
        return table
