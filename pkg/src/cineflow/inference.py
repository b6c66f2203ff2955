"""Optimization-as-inference from sparse slice contours.

Network weights stay frozen; only the latent codes move. Contour points
carry a reference SDF of zero, so the data term is the mean |composed sdf|
over the observed slices, optionally joined by the same deformation
regularizers used in training (they reuse the training machinery and are
toggleable). Also hosts mesh extraction, dense tracking through the learned
deformation, and motion-code PCA completion of partial sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import AdamState, adam_step
from .edspace import NormalizationSpec, normalize
from .errors import DatasetError, DivergenceError, ShapeMismatchError
from .geom import SimilarityTransform, TriMesh, marching_cubes, register_similarity
from .models import MotionNet, ShapeNet, composed_backward, composed_forward, deform_to_ed
from .observations import SliceObservation
from .seeds import substream
from .training import LossWeights, TrainTrace, code_reg_grad, loss_pairwise_grad, loss_pointwise_grad

# -- registration into the canonical frame ------------------------------------


def register_observation(
    obs: SliceObservation,
    mean_mesh_canonical: TriMesh,
    with_scale: bool = True,
) -> tuple[SliceObservation, SimilarityTransform]:
    """Align an observation into the canonical frame via its ED contours.

    The ED-phase point cloud is registered to the canonical mean shape; the
    resulting transform is applied to every phase of the sequence.
    """
    obs.require_ed_phase()
    transform = register_similarity(obs.ed_points(), mean_mesh_canonical, with_scale=with_scale)
    return obs.transformed(transform), transform


# -- latent-code inference -----------------------------------------------------


@dataclass
class InferenceConfig:
    iters: int = 600
    lr: float = 5e-3
    lr_final_factor: float = 0.1  # geometric decay of the code learning rate
    points_per_iter: int = 2048
    weights: LossWeights = field(default_factory=LossWeights)
    use_deformation_regularizers: bool = True
    eps_pairwise: float = 0.5
    delta_huber: float = 0.05
    code_init_std: float = 0.01
    log_every: int = 50


@dataclass
class InferenceResult:
    shape_code: np.ndarray
    motion_codes: dict[int, np.ndarray]  # phase -> code
    trace: TrainTrace
    t_n: int

    def motion_code(self, phase: int) -> np.ndarray:
        return self.motion_codes[phase]


def infer_codes(
    obs: SliceObservation,
    shape_net: ShapeNet,
    motion_net: MotionNet,
    config: InferenceConfig,
    seed: int,
    emit=None,
) -> InferenceResult:
    """Fit one shape code and per-phase motion codes to slice contours.

    ``obs`` must already live in the canonical frame (see
    register_observation). Weights are never mutated.
    """
    phases = obs.phases
    pts_by_phase = [obs.points_for_phase(ph) for ph in phases]
    taus = np.array([obs.tau(ph) for ph in phases])
    n_phases = len(phases)

    rng_init = substream(seed, "infer-init")
    shape_code = rng_init.normal(0.0, config.code_init_std, size=shape_net.code_dim)
    motion_codes = rng_init.normal(
        0.0, config.code_init_std, size=(n_phases, motion_net.code_dim)
    )
    trace = TrainTrace()
    if config.iters == 0:
        return InferenceResult(
            shape_code, {ph: motion_codes[i] for i, ph in enumerate(phases)}, trace, obs.t_n
        )

    state = AdamState([shape_code, motion_codes])
    batch_rng = substream(seed, "infer-batch")
    pair_rng = substream(seed, "infer-pairs")
    per_phase = max(8, config.points_per_iter // n_phases)
    decay = config.lr_final_factor ** (1.0 / max(config.iters - 1, 1))
    lr = config.lr
    w = config.weights

    for step in range(config.iters):
        pts = np.empty((per_phase * n_phases, 3))
        tau_col = np.empty(per_phase * n_phases)
        cm_batch = np.empty((per_phase * n_phases, motion_net.code_dim))
        group = np.repeat(np.arange(n_phases), per_phase)
        for i in range(n_phases):
            pool = pts_by_phase[i]
            take = batch_rng.integers(0, len(pool), size=per_phase)
            sl = slice(i * per_phase, (i + 1) * per_phase)
            pts[sl] = pool[take]
            tau_col[sl] = taus[i]
            cm_batch[sl] = motion_codes[i]

        pred, cache = composed_forward(shape_net, motion_net, shape_code, cm_batch, pts, tau_col)
        l_sdf = float(np.mean(np.abs(pred)))  # reference SDF is 0 at contours
        d_pred = np.sign(pred) / len(pred)
        if config.use_deformation_regularizers:
            l_pw, d_v_pw = loss_pointwise_grad(cache.velocity, config.delta_huber)
            l_pp, d_v_pp = loss_pairwise_grad(
                pts, cache.deformed, config.eps_pairwise, groups=group, rng=pair_rng
            )
            upstream_v = w.pointwise * d_v_pw + w.pairwise * d_v_pp
        else:
            l_pw = l_pp = 0.0
            upstream_v = None
        reg_m, reg_m_grads = code_reg_grad(list(motion_codes))
        reg_s, reg_s_grads = code_reg_grad([shape_code])
        loss = w.sdf * l_sdf + w.pointwise * l_pw + w.pairwise * l_pp + w.code_reg * (reg_m + reg_s)
        if not np.isfinite(loss):
            raise DivergenceError(f"inference diverged at iteration {step}: {trace.records[-3:]}")

        grads = composed_backward(
            shape_net, motion_net, cache, w.sdf * d_pred, upstream_v, with_param_grads=False
        )
        cs_grad = grads.d_code_shape.sum(axis=0) + w.code_reg * reg_s_grads[0]
        cm_grad = grads.d_code_motion.reshape(n_phases, per_phase, -1).sum(axis=1)
        cm_grad += w.code_reg * np.stack(reg_m_grads)
        adam_step([shape_code, motion_codes], [cs_grad, cm_grad], state, lr)
        lr *= decay
        if step % config.log_every == 0 or step == config.iters - 1:
            trace.log(
                {"iter": step, "loss": loss, "l_sdf": l_sdf, "l_pw": l_pw, "l_pp": l_pp}, emit
            )

    return InferenceResult(
        shape_code, {ph: motion_codes[i] for i, ph in enumerate(phases)}, trace, obs.t_n
    )


# -- mesh extraction ------------------------------------------------------------


def reconstruct_phase(
    shape_net: ShapeNet,
    motion_net: MotionNet,
    shape_code: np.ndarray,
    motion_code: np.ndarray,
    tau: float,
    grid_res: int = 96,
    spec: NormalizationSpec | None = None,
    band: bool | None = None,
) -> TriMesh:
    """Evaluate the composed SDF on a grid over [-1, 1]^3 and extract iso 0.

    ``band=True`` (default for grid_res >= 64) evaluates a half-resolution
    grid first and refines only near the zero crossing, which leaves the
    extracted surface untouched while skipping the saturated far field.
    Pass ``spec`` to de-normalize the mesh back to physical units.
    """

    def fn(points):
        return shape_net.forward(shape_code, deform_to_ed(motion_net, motion_code, points, tau))

    if band is None:
        band = grid_res >= 64
    axis = np.linspace(-1.0, 1.0, grid_res)
    spacing = np.full(3, axis[1] - axis[0])
    origin = np.full(3, -1.0)
    if band:
        field = _banded_eval(fn, grid_res)
    else:
        field = _full_eval(fn, grid_res)
    mesh = marching_cubes(field, 0.0, origin, spacing)
    if spec is not None and len(mesh.vertices):
        mesh = TriMesh(spec.invert_points(mesh.vertices), mesh.faces, validate=False)
    return mesh


def _grid_points(res: int) -> np.ndarray:
    axis = np.linspace(-1.0, 1.0, res)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def _full_eval(fn, res: int) -> np.ndarray:
    pts = _grid_points(res)
    vals = np.empty(len(pts))
    chunk = 65536
    for s in range(0, len(pts), chunk):
        vals[s : s + chunk] = fn(pts[s : s + chunk])
    return vals.reshape(res, res, res)


def _banded_eval(fn, res: int) -> np.ndarray:
    coarse_res = res // 2 + 1
    coarse = _full_eval(fn, coarse_res)
    # trilinear upsample of the coarse field onto the fine grid
    fine_axis = np.linspace(0, coarse_res - 1, res)
    i0 = np.clip(np.floor(fine_axis).astype(int), 0, coarse_res - 2)
    frac = fine_axis - i0
    up = coarse
    for ax in range(3):
        lo = np.take(up, i0, axis=ax)
        hi = np.take(up, i0 + 1, axis=ax)
        shape = [1, 1, 1]
        shape[ax] = res
        f = frac.reshape(shape)
        up = lo * (1 - f) + hi * f
    coarse_diag = np.sqrt(3.0) * 2.0 / (coarse_res - 1)
    thresh = max(1.5 * coarse_diag, 0.06)
    mask = np.abs(up) < thresh
    pts = _grid_points(res)[mask.ravel()]
    vals = up.ravel().copy()
    chunk = 65536
    exact = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        exact[s : s + chunk] = fn(pts[s : s + chunk])
    vals[mask.ravel()] = exact
    return vals.reshape(res, res, res)


def reconstruct_sequence(
    shape_net, motion_net, result: InferenceResult, grid_res: int = 96, spec=None
) -> dict[int, TriMesh]:
    meshes = {}
    for ph in sorted(result.motion_codes):
        meshes[ph] = reconstruct_phase(
            shape_net,
            motion_net,
            result.shape_code,
            result.motion_codes[ph],
            ph / result.t_n,
            grid_res=grid_res,
            spec=spec,
        )
    return meshes


# -- dense point tracking --------------------------------------------------------


@dataclass
class TrackResult:
    points: np.ndarray
    residual: np.ndarray  # per-point inverse-solve residual
    converged: np.ndarray  # per-point flag

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if len(self.residual) else 0.0


def track_points(
    motion_net: MotionNet,
    x: np.ndarray,
    code_from: np.ndarray,
    tau_from: float,
    code_to: np.ndarray,
    tau_to: float,
    tol: float = 1e-6,
    max_iters: int = 100,
) -> TrackResult:
    """Map phase-i points to phase j through the shared ED frame.

    The forward map to ED is direct; the return trip inverts y + v(y) = x'
    by damped fixed-point iteration (the learned displacements are smooth
    and moderate, so the iteration contracts).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_ed = deform_to_ed(motion_net, code_from, x, tau_from)
    y = x_ed.copy()
    damping = np.ones(len(x))
    residual = np.full(len(x), np.inf)
    for _ in range(max_iters):
        v = motion_net.forward(code_to, y, tau_to)
        f = y + v - x_ed
        res_new = np.linalg.norm(f, axis=1)
        # halve the step for points whose residual grew (local expansion)
        grew = res_new > residual
        damping[grew] = np.maximum(damping[grew] * 0.5, 1.0 / 64.0)
        residual = res_new
        if residual.max() < tol:
            break
        y = y - damping[:, None] * f
    converged = residual < tol
    return TrackResult(y, residual, converged)


# -- motion-code PCA interpolation -----------------------------------------------


class MotionPca:
    """PCA over whole-sequence motion-code rows (S x (T_N * K_m))."""

    def __init__(self, mean: np.ndarray, basis: np.ndarray, singular_values: np.ndarray,
                 t_n: int, code_dim: int):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.basis = np.asarray(basis, dtype=np.float64)
        self.singular_values = np.asarray(singular_values, dtype=np.float64)
        self.t_n = int(t_n)
        self.code_dim = int(code_dim)
        if self.mean.size != t_n * code_dim or self.basis.shape[0] != self.mean.size:
            raise ShapeMismatchError("motion PCA dimensions inconsistent")

    @property
    def k_beta(self) -> int:
        return self.basis.shape[1]

    def mean_rows(self) -> np.ndarray:
        return self.mean.reshape(self.t_n, self.code_dim)

    def block(self, phase: int) -> np.ndarray:
        """(K_m, K_beta) rows of the basis belonging to one phase."""
        k = self.code_dim
        return self.basis[phase * k : (phase + 1) * k]

    def expand(self, beta: np.ndarray) -> np.ndarray:
        """(T_N, K_m) full code sequence for coefficients beta."""
        return (self.mean + self.basis @ beta).reshape(self.t_n, self.code_dim)


def build_motion_pca(code_table, k_beta: int | None = None, energy: float = 0.95) -> MotionPca:
    """SVD of the stacked per-subject motion-code sequences.

    Default k_beta keeps the smallest number of modes reaching the given
    fraction of total variance. Ragged sequence lengths are rejected.
    """
    subjects = code_table.subjects()
    if len(subjects) < 2:
        raise DatasetError("motion PCA needs at least 2 training sequences")
    lengths = {len(code_table.phases(s)) for s in subjects}
    if len(lengths) != 1:
        raise DatasetError(f"ragged sequence lengths: {sorted(lengths)}")
    t_n = lengths.pop()
    rows = np.stack([code_table.motion_matrix(s).ravel() for s in subjects])
    mean = rows.mean(axis=0)
    centered = rows - mean
    u, sing, vt = np.linalg.svd(centered, full_matrices=False)
    max_rank = len(subjects) - 1
    if k_beta is None:
        total = float((sing**2).sum())
        csum = np.cumsum(sing**2)
        k_beta = int(np.searchsorted(csum, energy * total) + 1)
        k_beta = min(k_beta, max_rank)
    if not (1 <= k_beta <= max_rank):
        raise DatasetError(f"k_beta must be in [1, {max_rank}], got {k_beta}")
    return MotionPca(mean, vt[:k_beta].T, sing[:k_beta], t_n, code_table.motion_dim)


def interpolate_motion(
    pca: MotionPca,
    observed: list[tuple[int, np.ndarray]],
    strict_paper: bool = False,
) -> tuple[np.ndarray, dict]:
    """Complete a code sequence from L observed phases.

    Solves min_beta sum_i ||V_i beta - (c_i - mean_i)||^2 and expands
    mean + V beta; observed rows are then replaced by the exact observed
    codes. ``strict_paper`` regresses against the raw (uncentered) codes
    instead. Rank-deficient systems fall back to the pseudoinverse and are
    flagged in the metadata.
    """
    if not observed:
        raise DatasetError("need at least one observed phase")
    phases = [int(p) for p, _ in observed]
    if len(set(phases)) != len(phases):
        raise DatasetError("duplicate observed phases")
    mean_rows = pca.mean_rows()
    blocks = []
    targets = []
    for phase, code in observed:
        if not (0 <= phase < pca.t_n):
            raise DatasetError(f"phase {phase} outside [0, {pca.t_n})")
        code = np.asarray(code, dtype=np.float64).ravel()
        if code.size != pca.code_dim:
            raise ShapeMismatchError("observed code has wrong dimension")
        blocks.append(pca.block(phase))
        targets.append(code if strict_paper else code - mean_rows[phase])
    a = np.vstack(blocks)
    b = np.concatenate(targets)
    beta, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    meta = {
        "rank_deficient": bool(rank < pca.k_beta),
        "n_observed": len(observed),
        "low_confidence": len(observed) < 2,
        "beta": beta,
    }
    full = pca.expand(beta)
    for phase, code in observed:
        full[phase] = np.asarray(code, dtype=np.float64).ravel()
    return full, meta


def interpolate_two_phase(
    pca: MotionPca,
    code_ed: np.ndarray,
    code_es: np.ndarray | None,
    es_phase: int,
) -> tuple[np.ndarray, dict]:
    """CT-style completion from the two critical phases (ED and ES).

    A missing ES code degrades to single-phase regression, flagged
    low-confidence.
    """
    observed = [(0, code_ed)]
    if code_es is not None:
        observed.append((es_phase, code_es))
    return interpolate_motion(pca, observed)


def resample_motion_codes(codes: np.ndarray, t_n_target: int) -> np.ndarray:
    """Linear resampling of a (T, K) code sequence to a new length in tau."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    t_src = len(codes)
    if t_src == t_n_target:
        return codes.copy()
    tau_src = np.arange(t_src) / t_src
    tau_tgt = np.arange(t_n_target) / t_n_target
    out = np.empty((t_n_target, codes.shape[1]))
    for k in range(codes.shape[1]):
        out[:, k] = np.interp(tau_tgt, tau_src, codes[:, k])
    return out
