"""Point sampling, losses, shape-model pre-training, and joint training.

Losses are batch means (the reference formulation sums over sequences,
phases, and points; means keep the loss weights independent of batch size,
and the sums are recovered by multiplying by the batch dimensions). An
"epoch" is one optimizer step on a freshly drawn minibatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import AdamState, adam_step
from .errors import DatasetError, DivergenceError, ShapeMismatchError
from .geom import TriMesh, sample_surface, uniform_in_box
from .geom.sdf import MeshSdf
from .models import (
    CodeTable,
    MotionNet,
    ShapeNet,
    composed_backward,
    composed_forward,
    phase_tau,
)
from .seeds import substream

DELTA_CLAMP = 0.1  # SDF clamp half-width inside the loss, canonical units


@dataclass
class LossWeights:
    sdf: float = 1.0
    pointwise: float = 5e-3
    pairwise: float = 1e-4
    code_reg: float = 1e-4


@dataclass
class SampleBatch:
    """Points with ground-truth SDF values, labeled by phase and subject."""

    points: np.ndarray  # (B, 3)
    gt_sdf: np.ndarray  # (B,)
    tau: np.ndarray | None = None  # per point
    phase: np.ndarray | None = None
    subject: np.ndarray | None = None

    def __post_init__(self):
        if len(self.points) != len(self.gt_sdf):
            raise ShapeMismatchError("points and gt_sdf length mismatch")
        if not np.all(np.isfinite(self.gt_sdf)):
            raise DatasetError("non-finite ground-truth SDF")
        if np.abs(self.points).max() > 1.1:
            raise DatasetError("sample points escape the canonical box [-1.1, 1.1]^3")

    def __len__(self):
        return len(self.points)


def sample_training_points(
    mesh: TriMesh,
    n_surface: int,
    n_uniform: int,
    sigma_near: tuple[float, float],
    rng: np.random.Generator,
) -> SampleBatch:
    """Near-surface + uniform samples with exact ground-truth SDF.

    Surface samples are perturbed by Gaussian noise, half with each of the
    two stds in sigma_near; uniform samples cover [-1, 1]^3. The mesh must
    be watertight (it is the SDF oracle).
    """
    sdf = MeshSdf(mesh)
    pts_list = []
    if n_surface > 0:
        on_surface = sample_surface(mesh, n_surface, rng)
        half = n_surface // 2
        noise = np.concatenate(
            [
                rng.normal(0.0, sigma_near[0], size=(half, 3)),
                rng.normal(0.0, sigma_near[1], size=(n_surface - half, 3)),
            ]
        )
        pts_list.append(np.clip(on_surface + noise, -1.1, 1.1))
    if n_uniform > 0:
        pts_list.append(uniform_in_box(n_uniform, rng))
    points = np.vstack(pts_list)
    return SampleBatch(points=points, gt_sdf=sdf.signed(points))


# -- losses (values and the gradients the optimizer needs) -------------------


def clamp_sdf(x: np.ndarray, delta: float = DELTA_CLAMP) -> np.ndarray:
    return np.clip(x, -delta, delta)


def loss_sdf(pred: np.ndarray, gt: np.ndarray, delta: float = DELTA_CLAMP) -> float:
    """Mean |clamp(pred) - clamp(gt)|."""
    return float(np.mean(np.abs(clamp_sdf(pred, delta) - clamp_sdf(gt, delta))))


def loss_sdf_grad(pred: np.ndarray, gt: np.ndarray, delta: float = DELTA_CLAMP):
    cp = clamp_sdf(pred, delta)
    diff = cp - clamp_sdf(gt, delta)
    value = float(np.mean(np.abs(diff)))
    active = np.abs(pred) < delta  # clamp kills the gradient outside the band
    grad = np.sign(diff) * active / len(pred)
    return value, grad


def huber(r: np.ndarray, delta: float) -> np.ndarray:
    """Quadratic r^2/(2 delta) below delta, linear r - delta/2 above."""
    return np.where(r <= delta, r * r / (2.0 * delta), r - delta / 2.0)


def loss_pointwise(v: np.ndarray, delta_huber: float) -> float:
    """Mean Huber penalty on displacement magnitudes."""
    if delta_huber <= 0:
        raise ValueError("delta_huber must be positive")
    return float(np.mean(huber(np.linalg.norm(np.atleast_2d(v), axis=1), delta_huber)))


def loss_pointwise_grad(v: np.ndarray, delta_huber: float):
    v = np.atleast_2d(v)
    r = np.linalg.norm(v, axis=1)
    value = float(np.mean(huber(r, delta_huber)))
    slope = np.where(r <= delta_huber, r / delta_huber, 1.0)
    safe_r = np.maximum(r, 1e-300)
    grad = (slope / safe_r)[:, None] * v / len(v)
    return value, grad


def draw_pairs(groups: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """(P, 2) random distinct index pairs, never crossing group labels.

    One pair per point (P = B), the standard subsampled estimator of the
    full quadratic pair sum.
    """
    groups = np.asarray(groups)
    pairs = []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        m = len(idx)
        if m < 2:
            continue
        offset = rng.integers(1, m, size=m)  # nonzero, so j != k
        partner = idx[(np.arange(m) + offset) % m]
        pairs.append(np.stack([idx, partner], axis=1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.vstack(pairs)


def loss_pairwise(
    points: np.ndarray,
    deformed: np.ndarray,
    eps: float,
    pairs: np.ndarray | None = None,
    groups: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    value, _ = loss_pairwise_grad(points, deformed, eps, pairs, groups, rng)
    return value


def loss_pairwise_grad(
    points: np.ndarray,
    deformed: np.ndarray,
    eps: float,
    pairs: np.ndarray | None = None,
    groups: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
):
    """Hinge on the relative displacement distortion of point pairs.

    For a pair (j, k): max(||v_j - v_k|| / ||x_j - x_k|| - eps, 0) with
    v = deformed - points. Returns (value, gradient w.r.t. v).
    """
    points = np.atleast_2d(points)
    v = np.atleast_2d(deformed) - points
    if pairs is None:
        if groups is None:
            groups = np.zeros(len(points), dtype=np.int64)
        if rng is None:
            raise ValueError("need an rng to draw pairs")
        pairs = draw_pairs(groups, rng)
    grad = np.zeros_like(v)
    if len(pairs) == 0:
        return 0.0, grad
    j, k = pairs[:, 0], pairs[:, 1]
    dx = np.linalg.norm(points[j] - points[k], axis=1)
    keep = dx > 1e-6
    j, k, dx = j[keep], k[keep], dx[keep]
    if len(j) == 0:
        return 0.0, grad
    dv_vec = v[j] - v[k]
    dv = np.linalg.norm(dv_vec, axis=1)
    hinge = dv / dx - eps
    active = hinge > 0
    value = float(np.sum(np.maximum(hinge, 0.0)) / len(j))
    if active.any():
        scale = active / (np.maximum(dv, 1e-300) * dx) / len(j)
        contrib = scale[:, None] * dv_vec
        np.add.at(grad, j, contrib)
        np.add.at(grad, k, -contrib)
    return value, grad


def code_reg(codes: list[np.ndarray]) -> float:
    """Mean L2 norm over a family of latent codes."""
    if not codes:
        return 0.0
    return float(np.mean([np.linalg.norm(c) for c in codes]))


def code_reg_grad(codes: list[np.ndarray]):
    value = code_reg(codes)
    grads = [c / max(np.linalg.norm(c), 1e-300) / len(codes) for c in codes]
    return value, grads


def loss_total(
    l_sdf: float,
    l_pointwise: float,
    l_pairwise: float,
    weights: LossWeights,
    motion_codes: list[np.ndarray] = (),
    shape_codes: list[np.ndarray] = (),
) -> float:
    """w1 L_sdf + w2 L_pw + w3 L_pp + w4 (|c_m| + |c_s|)."""
    reg = code_reg(list(motion_codes)) + code_reg(list(shape_codes))
    return (
        weights.sdf * l_sdf
        + weights.pointwise * l_pointwise
        + weights.pairwise * l_pairwise
        + weights.code_reg * reg
    )


# -- shape-model pre-training -------------------------------------------------


@dataclass
class PretrainConfig:
    epochs: int = 2000
    lr_net: float = 5e-4
    lr_codes: float = 1e-3
    code_dim: int = 256
    hidden: int = 512
    n_layers: int = 8
    skip_at: int = 4
    batch_shapes: int = 24
    points_per_shape: int = 96
    pool_surface: int = 3000
    pool_uniform: int = 800
    sigma_near: tuple[float, float] = (0.05, 0.01)
    code_reg_weight: float = 1e-4
    code_init_std: float = 0.01
    log_every: int = 100


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)

    def log(self, rec: dict, emit=None):
        self.records.append(rec)
        if emit is not None:
            emit(rec)


def build_pools(meshes, surface, uniform, sigma_near, seed, stream):
    return [
        sample_training_points(
            mesh, surface, uniform, sigma_near, substream(seed, stream, str(i))
        )
        for i, mesh in enumerate(meshes)
    ]


def pretrain_shape(
    shapes: list[TriMesh],
    config: PretrainConfig,
    seed: int,
    emit=None,
    hook=None,
    hook_every: int = 0,
) -> tuple[ShapeNet, np.ndarray, TrainTrace]:
    """Auto-decoder pre-training of the ED shape model.

    Jointly optimizes network weights and one latent code per shape against
    the clamped-SDF loss plus code regularization. Returns the trained net,
    the (S, K) code matrix, and the loss trace.
    """
    if len(shapes) < 1:
        raise DatasetError("pre-training needs at least one shape")
    pools = build_pools(
        shapes, config.pool_surface, config.pool_uniform, config.sigma_near, seed, "pretrain-pool"
    )
    net = ShapeNet.create(
        substream(seed, "pretrain-init"),
        code_dim=config.code_dim,
        hidden=config.hidden,
        n_layers=config.n_layers,
        skip_at=config.skip_at,
    )
    codes = substream(seed, "pretrain-codes").normal(
        0.0, config.code_init_std, size=(len(shapes), config.code_dim)
    )
    net_state = AdamState(net.net.parameters())
    code_state = AdamState([codes])
    batch_rng = substream(seed, "pretrain-batch")
    trace = TrainTrace()

    n_shapes = len(shapes)
    g = min(config.batch_shapes, n_shapes)
    for step in range(config.epochs):
        shape_idx = batch_rng.permutation(n_shapes)[:g] if g < n_shapes else np.arange(n_shapes)
        pts, gt, code_batch = _assemble_shape_batch(
            pools, codes, shape_idx, config.points_per_shape, batch_rng
        )
        pred, cache = net.forward_cached(code_batch, pts)
        l_sdf, d_pred = loss_sdf_grad(pred, gt)
        reg_val, reg_grads = code_reg_grad([codes[i] for i in shape_idx])
        loss = l_sdf + config.code_reg_weight * reg_val
        if not np.isfinite(loss):
            raise DivergenceError(f"pre-training diverged at epoch {step}")
        param_grads, d_code_pts, _ = net.backward(cache, d_pred)
        code_grads = np.zeros_like(codes)
        per_shape = d_code_pts.reshape(len(shape_idx), config.points_per_shape, -1).sum(axis=1)
        for row, i in enumerate(shape_idx):
            code_grads[i] = per_shape[row] + config.code_reg_weight * reg_grads[row]
        adam_step(net.net.parameters(), param_grads, net_state, config.lr_net)
        adam_step([codes], [code_grads], code_state, config.lr_codes)
        if step % config.log_every == 0 or step == config.epochs - 1:
            trace.log({"epoch": step, "loss": loss, "l_sdf": l_sdf, "l_reg": reg_val}, emit)
        if hook is not None and hook_every and (step + 1) % hook_every == 0:
            hook(step + 1, net, codes)
    return net, codes, trace


def _assemble_shape_batch(pools, codes, shape_idx, points_per_shape, rng):
    pts = np.empty((len(shape_idx) * points_per_shape, 3))
    gt = np.empty(len(shape_idx) * points_per_shape)
    code_batch = np.empty((len(pts), codes.shape[1]))
    for row, i in enumerate(shape_idx):
        pool = pools[i]
        take = rng.integers(0, len(pool), size=points_per_shape)
        sl = slice(row * points_per_shape, (row + 1) * points_per_shape)
        pts[sl] = pool.points[take]
        gt[sl] = pool.gt_sdf[take]
        code_batch[sl] = codes[i]
    return pts, gt, code_batch


def surface_sdf_error(
    shape_net: ShapeNet, code: np.ndarray, mesh: TriMesh, n: int, rng: np.random.Generator
) -> float:
    """Mean |predicted sdf| at fresh surface samples of the target shape."""
    pts = sample_surface(mesh, n, rng)
    return float(np.mean(np.abs(shape_net.forward(code, pts))))


def fit_shape_code(
    shape_net: ShapeNet,
    batch: SampleBatch,
    iters: int,
    lr: float,
    rng: np.random.Generator,
    points_per_iter: int = 512,
    code_reg_weight: float = 1e-4,
    init_std: float = 0.01,
) -> np.ndarray:
    """Code-only optimization against a sample batch (weights frozen)."""
    code = rng.normal(0.0, init_std, size=shape_net.code_dim)
    state = AdamState([code])
    for _ in range(iters):
        take = rng.integers(0, len(batch), size=min(points_per_iter, len(batch)))
        pred, cache = shape_net.forward_cached(code, batch.points[take])
        _, d_pred = loss_sdf_grad(pred, batch.gt_sdf[take])
        _, d_code_pts, _ = shape_net.backward(cache, d_pred, with_param_grads=False)
        reg_val, reg_grads = code_reg_grad([code])
        grad = d_code_pts.sum(axis=0) + code_reg_weight * reg_grads[0]
        adam_step([code], [grad], state, lr)
    return code


# -- joint motion + shape training ---------------------------------------------


@dataclass
class TrainingSequence:
    """One subject's full cycle in the canonical frame."""

    subject_id: str
    meshes: list[TriMesh]

    @property
    def t_n(self) -> int:
        return len(self.meshes)


@dataclass
class JointConfig:
    epochs: int = 3000
    lr_motion: float = 1e-3  # motion model learns faster than shape
    lr_shape: float = 1e-4
    lr_codes: float = 1e-3
    motion_code_dim: int = 128
    motion_hidden: int = 256
    motion_layers: int = 6
    groups_per_step: int = 8  # (subject, phase) pairs per minibatch
    points_per_group: int = 192
    pool_surface: int = 1200
    pool_uniform: int = 300
    sigma_near: tuple[float, float] = (0.05, 0.01)
    weights: LossWeights = field(default_factory=LossWeights)
    eps_pairwise: float = 0.5
    delta_huber: float = 0.05
    ed_identity_weight: float = 0.0  # optional penalty; reference setup leaves ED unconstrained
    code_init_std: float = 0.01
    log_every: int = 100


def train_joint(
    dataset: list[TrainingSequence],
    shape_net: ShapeNet,
    config: JointConfig,
    seed: int,
    emit=None,
    hook=None,
    hook_every: int = 0,
) -> tuple[MotionNet, ShapeNet, CodeTable, TrainTrace]:
    """End-to-end optimization of motion + shape through the composed SDF.

    Fine-tunes (a copy of) the pre-trained shape net at lr_shape while the
    motion net trains at the larger lr_motion; one shape code per sequence,
    one motion code per phase. epochs = 0 returns everything at
    initialization.
    """
    if not dataset:
        raise DatasetError("empty dataset")
    t_n = dataset[0].t_n
    for seq in dataset:
        if seq.t_n != t_n:
            raise DatasetError(f"sequence {seq.subject_id} has {seq.t_n} phases, expected {t_n}")
        if any(m is None or len(m.faces) == 0 for m in seq.meshes):
            raise DatasetError(f"sequence {seq.subject_id} is missing phase meshes")

    shape_net = ShapeNet(shape_net.net.copy(), shape_net.code_dim)
    motion_net = MotionNet.create(
        substream(seed, "joint-motion-init"),
        code_dim=config.motion_code_dim,
        hidden=config.motion_hidden,
        n_layers=config.motion_layers,
    )
    subjects = [seq.subject_id for seq in dataset]
    table = CodeTable.init_random(
        subjects,
        t_n,
        substream(seed, "joint-codes"),
        shape_dim=shape_net.code_dim,
        motion_dim=config.motion_code_dim,
        std=config.code_init_std,
    )
    trace = TrainTrace()
    if config.epochs == 0:
        return motion_net, shape_net, table, trace

    all_meshes = [m for seq in dataset for m in seq.meshes]
    pools = build_pools(
        all_meshes, config.pool_surface, config.pool_uniform, config.sigma_near, seed, "joint-pool"
    )
    # dense code matrices for Adam; the table views into them
    shape_codes = np.stack([table.shape_codes[s] for s in subjects])
    motion_codes = np.stack(
        [table.motion_codes[(s, p)] for s in subjects for p in range(t_n)]
    )
    net_shape_state = AdamState(shape_net.net.parameters())
    net_motion_state = AdamState(motion_net.net.parameters())
    code_state = AdamState([shape_codes, motion_codes])
    batch_rng = substream(seed, "joint-batch")
    pair_rng = substream(seed, "joint-pairs")

    n_entries = len(dataset) * t_n
    p = config.points_per_group
    for step in range(config.epochs):
        entries = batch_rng.permutation(n_entries)[: config.groups_per_step]
        subj_idx, phase_idx = np.divmod(entries, t_n)
        b = len(entries) * p
        pts = np.empty((b, 3))
        gt = np.empty(b)
        tau_col = np.empty(b)
        cs_batch = np.empty((b, shape_net.code_dim))
        cm_batch = np.empty((b, config.motion_code_dim))
        group_lab = np.repeat(np.arange(len(entries)), p)
        for row, e in enumerate(entries):
            pool = pools[e]
            take = batch_rng.integers(0, len(pool), size=p)
            sl = slice(row * p, (row + 1) * p)
            pts[sl] = pool.points[take]
            gt[sl] = pool.gt_sdf[take]
            tau_col[sl] = phase_tau(phase_idx[row], t_n)
            cs_batch[sl] = shape_codes[subj_idx[row]]
            cm_batch[sl] = motion_codes[e]

        pred, cache = composed_forward(shape_net, motion_net, cs_batch, cm_batch, pts, tau_col)
        l_sdf, d_pred = loss_sdf_grad(pred, gt)
        l_pw, d_v_pw = loss_pointwise_grad(cache.velocity, config.delta_huber)
        l_pp, d_v_pp = loss_pairwise_grad(
            pts, cache.deformed, config.eps_pairwise, groups=group_lab, rng=pair_rng
        )
        cm_list = [motion_codes[e] for e in np.unique(entries)]
        cs_list = [shape_codes[i] for i in np.unique(subj_idx)]
        reg_m, reg_m_grads = code_reg_grad(cm_list)
        reg_s, reg_s_grads = code_reg_grad(cs_list)
        w = config.weights
        loss = (
            w.sdf * l_sdf
            + w.pointwise * l_pw
            + w.pairwise * l_pp
            + w.code_reg * (reg_m + reg_s)
        )
        upstream_v = w.pointwise * d_v_pw + w.pairwise * d_v_pp
        if config.ed_identity_weight > 0.0:
            ed_pts = tau_col == 0.0
            if ed_pts.any():
                v_ed = cache.velocity[ed_pts]
                loss += config.ed_identity_weight * float(np.mean(v_ed**2) * 3)
                up = np.zeros_like(cache.velocity)
                up[ed_pts] = 2.0 * config.ed_identity_weight * v_ed / max(ed_pts.sum(), 1)
                upstream_v = upstream_v + up
        if not np.isfinite(loss):
            raise DivergenceError(f"joint training diverged at epoch {step}")

        grads = composed_backward(
            shape_net, motion_net, cache, w.sdf * d_pred, upstream_velocity=upstream_v
        )
        cs_grad = np.zeros_like(shape_codes)
        cm_grad = np.zeros_like(motion_codes)
        per_group_cs = grads.d_code_shape.reshape(len(entries), p, -1).sum(axis=1)
        per_group_cm = grads.d_code_motion.reshape(len(entries), p, -1).sum(axis=1)
        for row, e in enumerate(entries):
            cs_grad[subj_idx[row]] += per_group_cs[row]
            cm_grad[e] += per_group_cm[row]
        for pos, e in enumerate(np.unique(entries)):
            cm_grad[e] += w.code_reg * reg_m_grads[pos]
        for pos, i in enumerate(np.unique(subj_idx)):
            cs_grad[i] += w.code_reg * reg_s_grads[pos]

        adam_step(shape_net.net.parameters(), grads.shape_params, net_shape_state, config.lr_shape)
        adam_step(motion_net.net.parameters(), grads.motion_params, net_motion_state, config.lr_motion)
        adam_step([shape_codes, motion_codes], [cs_grad, cm_grad], code_state, config.lr_codes)

        if step % config.log_every == 0 or step == config.epochs - 1:
            trace.log(
                {
                    "epoch": step,
                    "loss": loss,
                    "l_sdf": l_sdf,
                    "l_pw": l_pw,
                    "l_pp": l_pp,
                    "l_reg": reg_m + reg_s,
                },
                emit,
            )
        if hook is not None and hook_every and (step + 1) % hook_every == 0:
            hook(step + 1, shape_net, motion_net, shape_codes, motion_codes)

    table = CodeTable(shape_net.code_dim, config.motion_code_dim)
    for i, s in enumerate(subjects):
        table.add_shape_code(s, shape_codes[i])
        for ph in range(t_n):
            table.add_motion_code(s, ph, motion_codes[i * t_n + ph])
    return motion_net, shape_net, table, trace
