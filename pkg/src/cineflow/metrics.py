"""Evaluation metrics: Chamfer, Earth Mover, slice-level Dice/Hausdorff,
and volume curves.

Chamfer here is the symmetric sum of mean nearest-neighbor distances;
EMD is the mean cost of the exact minimum-cost perfect matching (Hungarian)
on seeded equal-size subsamples. Both are reported in whatever units the
inputs carry.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import CineflowError, ShapeMismatchError
from .geom import PointCloud, TriMesh
from .geom.slicing import slice_contours
from .seeds import substream


def _cloud_rng(seed: int, pts: np.ndarray) -> np.random.Generator:
    import hashlib

    digest = hashlib.sha256(np.ascontiguousarray(pts).tobytes()).hexdigest()[:16]
    return substream(seed, "emd-subsample", digest)


def _points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    if isinstance(x, TriMesh):
        return x.vertices
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def chamfer(a, b) -> float:
    """mean_a min_b ||.|| + mean_b min_a ||.|| (kd-tree accelerated)."""
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise CineflowError("chamfer distance of an empty point cloud")
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float(d_ab.mean() + d_ba.mean())


def emd(a, b, n_sub: int = 256, seed: int = 0) -> float:
    """Mean matched distance of the exact optimal assignment.

    Both clouds are subsampled to n_sub points (seeded, without
    replacement); clouds of equal size draw identical index sets so that
    emd(x, x) == 0 exactly.
    """
    pa, pb = _points(a), _points(b)
    if n_sub <= 0:
        raise CineflowError("n_sub must be positive")
    if n_sub > min(len(pa), len(pb)):
        raise CineflowError(
            f"n_sub={n_sub} exceeds the smaller cloud ({min(len(pa), len(pb))} points)"
        )
    # subsample streams keyed by cloud content, so emd(a, b) == emd(b, a)
    # and identical clouds draw identical index sets
    if len(pa) > n_sub:
        pa = pa[_cloud_rng(seed, pa).choice(len(pa), n_sub, replace=False)]
    if len(pb) > n_sub:
        pb = pb[_cloud_rng(seed, pb).choice(len(pb), n_sub, replace=False)]
    cost = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


@dataclass
class SliceMask:
    """Rasterized annulus cross-section on one plane."""

    grid: np.ndarray  # (H, W) bool
    spacing: float  # pixel edge length, physical units
    origin: np.ndarray  # world position of pixel (0, 0) center
    axis_u: np.ndarray  # world direction of columns
    axis_v: np.ndarray  # world direction of rows

    def __post_init__(self):
        if self.spacing <= 0:
            raise ShapeMismatchError("mask spacing must be positive")

    @property
    def area(self) -> float:
        return float(self.grid.sum()) * self.spacing**2


def _plane_frame(normal: np.ndarray):
    normal = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(normal @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def _fill_even_odd(loops_2d: list[np.ndarray], x_centers: np.ndarray, y_centers: np.ndarray):
    """Scanline even-odd polygon fill over a pixel-center grid."""
    grid = np.zeros((len(y_centers), len(x_centers)), dtype=bool)
    for loop in loops_2d:
        p = loop
        q = np.roll(loop, -1, axis=0)
        for (x0, y0), (x1, y1) in zip(p, q):
            if y0 == y1:
                continue
            lo, hi = (y0, y1) if y0 < y1 else (y1, y0)
            rows = np.flatnonzero((y_centers >= lo) & (y_centers < hi))
            if len(rows) == 0:
                continue
            x_cross = x0 + (y_centers[rows] - y0) * (x1 - x0) / (y1 - y0)
            for r, xc in zip(rows, x_cross):
                grid[r] ^= x_centers < xc
    return grid


def rasterize_cross_section(
    mesh: TriMesh,
    origin,
    normal,
    spacing: float,
    padding: float = 2.0,
    frame: tuple | None = None,
    extent: tuple | None = None,
) -> SliceMask | None:
    """Even-odd rasterization of the mesh's cross-section with a plane.

    The region between inner and outer contours fills as the annulus. Pass
    ``frame``/``extent`` to rasterize onto an existing mask's grid. Returns
    None when the plane misses the mesh and no extent is forced.
    """
    origin = np.asarray(origin, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    u, v = frame if frame is not None else _plane_frame(normal)
    loops = slice_contours(mesh, origin, normal)
    loops_2d = [np.stack([(lp - origin) @ u, (lp - origin) @ v], axis=1) for lp in loops]
    if extent is None:
        if not loops_2d:
            return None
        all_pts = np.vstack(loops_2d)
        lo = all_pts.min(axis=0) - padding * spacing
        hi = all_pts.max(axis=0) + padding * spacing
    else:
        lo, hi = extent
    x_centers = np.arange(lo[0], hi[0] + spacing / 2, spacing)
    y_centers = np.arange(lo[1], hi[1] + spacing / 2, spacing)
    grid = _fill_even_odd(loops_2d, x_centers, y_centers)
    world_origin = origin + x_centers[0] * u + y_centers[0] * v
    return SliceMask(grid, spacing, world_origin, u, v)


def _boundary_points(mask: SliceMask) -> np.ndarray:
    interior = binary_erosion(mask.grid)
    boundary = mask.grid & ~interior
    rows, cols = np.nonzero(boundary)
    return np.stack([cols * mask.spacing, rows * mask.spacing], axis=1)


def dice_hausdorff(
    pred: TriMesh, gt_mask: SliceMask, origin=None, normal=None, hd_percentile: float | None = None
) -> tuple[float, float]:
    """Slice-level overlap of a predicted mesh against a reference mask.

    The mesh is rasterized on the mask's own grid; dice = 2|A&B|/(|A|+|B|),
    hd = max (or given percentile) of the directed boundary distances, in
    the mask's physical units. An empty predicted cross-section yields
    dice 0 and hd equal to the mask diagonal.
    """
    if origin is None or normal is None:
        raise ValueError("pass the mask's plane origin and normal")
    h, w = gt_mask.grid.shape
    lo = np.array([0.0, 0.0])
    u, v = gt_mask.axis_u, gt_mask.axis_v
    rel = gt_mask.origin - np.asarray(origin, dtype=np.float64)
    lo2 = np.array([rel @ u, rel @ v])
    hi2 = lo2 + np.array([(w - 1) * gt_mask.spacing, (h - 1) * gt_mask.spacing])
    pred_mask = rasterize_cross_section(
        pred, origin, normal, gt_mask.spacing, frame=(u, v), extent=(lo2, hi2)
    )
    a = pred_mask.grid
    b = gt_mask.grid
    if a.shape != b.shape:  # guard against arange length drift
        hh, ww = min(a.shape[0], b.shape[0]), min(a.shape[1], b.shape[1])
        a, b = a[:hh, :ww], b[:hh, :ww]
    inter = np.logical_and(a, b).sum()
    total = a.sum() + b.sum()
    diag = float(np.hypot(h, w) * gt_mask.spacing)
    if a.sum() == 0 or b.sum() == 0:
        warnings.warn("empty cross-section in dice_hausdorff; returning degenerate values")
        return 0.0, diag
    dice = 2.0 * inter / total
    pa = _boundary_points(SliceMask(a, gt_mask.spacing, gt_mask.origin, u, v))
    pb = _boundary_points(gt_mask)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    if hd_percentile is None:
        hd = max(d_ab.max(), d_ba.max())
    else:
        hd = max(np.percentile(d_ab, hd_percentile), np.percentile(d_ba, hd_percentile))
    return float(dice), float(hd)


def volume_curve(meshes: list[TriMesh]) -> np.ndarray:
    """Divergence-theorem volume of each mesh (outer minus cavities).

    Requires watertight meshes; a negative total signals flipped
    orientation and is flagged with a warning.
    """
    volumes = []
    for i, mesh in enumerate(meshes):
        mesh.require_watertight("volume computation")
        vol = mesh.signed_volume()
        if vol < 0:
            warnings.warn(f"mesh {i} has negative signed volume (flipped orientation?)")
        volumes.append(vol)
    return np.asarray(volumes)


def ejection_fraction(volumes: np.ndarray) -> float:
    """(max - min) / max of a volume curve."""
    volumes = np.asarray(volumes, dtype=np.float64)
    return float((volumes.max() - volumes.min()) / volumes.max())
