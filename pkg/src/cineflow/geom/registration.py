"""Similarity registration of contour point clouds to a reference surface.

Iterative closest point with a closed-form Umeyama inner step, initialized
by centroid + principal-axes alignment. Because a near-ellipsoidal shell has
weakly determined axes, the initializer multi-starts over axis sign flips
and azimuth spins about the long axis and keeps the best short-run candidate
before iterating to convergence.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DegenerateInputError
from .mesh import PointCloud, SimilarityTransform, TriMesh
from .sdf import MeshSdf


def umeyama(source: np.ndarray, target: np.ndarray, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity aligning paired points source[i] -> target[i]."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    ds = src - mu_s
    dt = tgt - mu_t
    cov = dt.T @ ds / len(src)
    u, d, vt = np.linalg.svd(cov)
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    rot = u @ sign @ vt
    if with_scale:
        var_s = (ds * ds).sum() / len(src)
        if var_s <= 0:
            raise DegenerateInputError("source points are all identical")
        scale = np.trace(np.diag(d) @ sign) / var_s
    else:
        scale = 1.0
    t = mu_t - scale * rot @ mu_s
    return SimilarityTransform.from_parts(scale, rot, t)


class _Correspondence:
    """Closest-point lookup on the registration target."""

    def __init__(self, target):
        if isinstance(target, TriMesh):
            self._sdf = MeshSdf(target)
            self._tree = None
        elif isinstance(target, PointCloud):
            self._sdf = None
            self._pts = target.points
            self._tree = cKDTree(self._pts)
        else:
            raise TypeError("target must be a TriMesh or PointCloud")

    def closest(self, pts: np.ndarray):
        if self._sdf is not None:
            dist, cp = self._sdf.closest(pts)
            return dist, cp
        dist, idx = self._tree.query(pts)
        return dist, self._pts[idx]

    def reference_points(self) -> np.ndarray:
        return self._sdf.mesh.vertices if self._sdf is not None else self._pts


def _principal_frame(pts: np.ndarray) -> np.ndarray:
    """Columns = principal directions, descending variance, right-handed."""
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    frame = evecs[:, order]
    if np.linalg.det(frame) < 0:
        frame[:, 2] = -frame[:, 2]
    return frame


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


_AZ_BINS = 36


def _azimuth_profile(pts: np.ndarray, frame: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Mean cross-section radius per azimuth bin around the long axis.

    The profile's circular cross-correlation pins the spin about the long
    axis, which principal axes leave undetermined and plain ICP corrects
    only at a crawl on nearly rotationally symmetric shells.
    """
    local = (pts - center) @ frame  # column 0 = long axis
    azimuth = np.arctan2(local[:, 2], local[:, 1])
    radius = np.hypot(local[:, 1], local[:, 2])
    bins = ((azimuth + np.pi) / (2.0 * np.pi) * _AZ_BINS).astype(int) % _AZ_BINS
    total = np.zeros(_AZ_BINS)
    count = np.zeros(_AZ_BINS)
    np.add.at(total, bins, radius)
    np.add.at(count, bins, 1.0)
    mean_all = radius.mean()
    prof = np.where(count > 0, total / np.maximum(count, 1.0), mean_all)
    return prof - prof.mean()


def _best_azimuth_shifts(src_prof: np.ndarray, tgt_prof: np.ndarray, top: int = 2) -> list[float]:
    scores = np.array(
        [np.dot(np.roll(src_prof, s), tgt_prof) for s in range(_AZ_BINS)]
    )
    order = np.argsort(scores)[::-1][:top]
    return [2.0 * np.pi * s / _AZ_BINS for s in order]


def register_similarity(
    source,
    target,
    with_scale: bool = True,
    max_iters: int = 100,
    tol: float = 1e-6,
    n_azimuths: int = 6,
) -> SimilarityTransform:
    """ICP alignment of a point cloud onto a reference mesh or cloud.

    Converged when the relative change of the RMS residual drops below
    ``tol`` or after ``max_iters`` iterations. ``with_scale=False`` restricts
    the fit to a rigid motion.
    """
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    if len(src) < 4:
        raise DegenerateInputError("need at least 4 source points")
    centered = src - src.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] < 1e-9 * max(sv[0], 1e-300):
        raise DegenerateInputError("source points are coplanar or collinear")

    corr = _Correspondence(target)
    tgt_pts = corr.reference_points()

    frame_s = _principal_frame(src)
    frame_t = _principal_frame(tgt_pts)
    mu_s = src.mean(axis=0)
    mu_t = tgt_pts.mean(axis=0)
    if with_scale:
        scale0 = np.sqrt(
            ((tgt_pts - mu_t) ** 2).sum() / len(tgt_pts) / (((src - mu_s) ** 2).sum() / len(src))
        )
    else:
        scale0 = 1.0

    sub = src[:: max(1, len(src) // 400)]
    best = None
    flips = [np.diag(d) for d in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1))]
    long_axis = frame_t[:, 0]
    tgt_prof = _azimuth_profile(tgt_pts, frame_t, mu_t)
    coarse = [2.0 * np.pi * k / max(1, n_azimuths) for k in range(max(1, n_azimuths))]
    for flip in flips:
        base = frame_t @ flip @ frame_s.T
        moved = (src - mu_s) @ (scale0 * base).T + mu_t
        src_prof = _azimuth_profile(moved, frame_t, mu_t)
        angles = _best_azimuth_shifts(src_prof, tgt_prof) + coarse
        for angle in angles:
            rot = _axis_rotation(long_axis, angle) @ base
            t = SimilarityTransform.from_parts(scale0, rot, mu_t - scale0 * rot @ mu_s)
            t, err = _icp_refine(sub, corr, t, 5, tol, with_scale)
            if best is None or err < best[1]:
                best = (t, err)

    transform, _ = _icp_refine(src, corr, best[0], max_iters, tol, with_scale)
    return transform


def _icp_refine(src, corr, transform, iters, tol, with_scale):
    err_prev = None
    err = np.inf
    for _ in range(iters):
        moved = transform.apply_points(src)
        dist, cp = corr.closest(moved)
        err = float(np.sqrt(np.mean(dist**2)))
        converged = err_prev is not None and (
            err < 1e-14 or abs(err_prev - err) <= tol * max(err_prev, 1e-300)
        )
        if converged:
            break
        transform = umeyama(src, cp, with_scale=with_scale)
        err_prev = err
    return transform, err


def alignment_residual(transform: SimilarityTransform, source, target) -> float:
    """RMS distance of the transformed source to the target surface/cloud."""
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    dist, _ = _Correspondence(target).closest(transform.apply_points(src))
    return float(np.sqrt(np.mean(dist**2)))
