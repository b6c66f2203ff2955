"""Marching-cubes isosurface extraction.

Vectorized over active cells; triangle vertices are deduplicated through
global grid-edge ids, so shared edges yield shared vertices and the output
connectivity is watertight wherever the isosurface is closed. Vertices sit
exactly at the linear-interpolation crossing along their grid edge; faces
are oriented so normals point toward increasing field values.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from .mesh import TriMesh
from ._mc_tables import CORNER_PAIRS, EDGE_TABLE, TRI_TABLE

# corner offsets in (i, j, k) for v0..v7 (v0 at cell origin, x then y, +z on top)
_CORNER_OFFSETS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=np.int64,
)

# local edge -> (axis, lattice offset of the edge's low corner)
_EDGE_AXIS = np.empty(12, dtype=np.int64)
_EDGE_ORIGIN = np.empty((12, 3), dtype=np.int64)
for _e in range(12):
    _p, _q = CORNER_PAIRS[_e]
    _lo = np.minimum(_CORNER_OFFSETS[_p], _CORNER_OFFSETS[_q])
    _d = _CORNER_OFFSETS[_q] - _CORNER_OFFSETS[_p]
    _EDGE_AXIS[_e] = int(np.flatnonzero(_d != 0)[0])
    _EDGE_ORIGIN[_e] = _lo


def marching_cubes(
    field: np.ndarray,
    iso: float = 0.0,
    origin=(0.0, 0.0, 0.0),
    spacing=(1.0, 1.0, 1.0),
) -> TriMesh:
    """Extract the iso-level surface of a 3-D scalar grid.

    ``field[i, j, k]`` samples the point origin + (i, j, k) * spacing.
    A constant-sign field yields an empty mesh.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or min(field.shape) < 2:
        raise ShapeMismatchError("field must be a 3-D grid with at least 2 samples per axis")
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    nx, ny, nz = field.shape

    inside = field < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (di, dj, dk) in enumerate(_CORNER_OFFSETS):
        corner = inside[di : di + nx - 1, dj : dj + ny - 1, dk : dk + nz - 1]
        case |= corner.astype(np.int32) << bit

    active = np.flatnonzero((case > 0) & (case < 255))
    if len(active) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), validate=False)
    case_a = case.reshape(-1)[active]
    ci, cj, ck = np.unravel_index(active, case.shape)

    rows = TRI_TABLE[case_a]  # (A, 16) local edge ids, -1 padded
    counts = (rows >= 0).sum(axis=1)
    cell_of = np.repeat(np.arange(len(active)), counts)
    local_edges = rows[rows >= 0]

    # global edge id = axis * (nx*ny*nz) + linear lattice index of low corner
    ei = ci[cell_of] + _EDGE_ORIGIN[local_edges, 0]
    ej = cj[cell_of] + _EDGE_ORIGIN[local_edges, 1]
    ek = ck[cell_of] + _EDGE_ORIGIN[local_edges, 2]
    axis = _EDGE_AXIS[local_edges]
    gid = ((axis * nx + ei) * ny + ej) * nz + ek

    uniq, inv = np.unique(gid, return_inverse=True)
    u_axis, rem = np.divmod(uniq, nx * ny * nz)
    u_i, rem = np.divmod(rem, ny * nz)
    u_j, u_k = np.divmod(rem, nz)

    lo = np.stack([u_i, u_j, u_k], axis=1)
    hi = lo.copy()
    hi[np.arange(len(lo)), u_axis] += 1
    f0 = field[lo[:, 0], lo[:, 1], lo[:, 2]]
    f1 = field[hi[:, 0], hi[:, 1], hi[:, 2]]
    denom = f1 - f0
    mu = np.where(np.abs(denom) < 1e-300, 0.0, (iso - f0) / np.where(denom == 0, 1.0, denom))
    mu = np.clip(mu, 0.0, 1.0)
    verts_idx = lo + mu[:, None] * (hi - lo)
    vertices = origin + verts_idx * spacing

    faces = inv.reshape(-1, 3)
    # table order yields normals facing the below-iso side; flip so that
    # normals point toward increasing field values
    faces = faces[:, ::-1]
    mesh = TriMesh(vertices, faces)  # drops degenerate (zero-area) faces
    return _weld(mesh)


def _weld(mesh: TriMesh) -> TriMesh:
    """Merge exactly-coincident vertices (crossings that landed on a grid point)."""
    if len(mesh.vertices) == 0:
        return mesh
    uniq, inv = np.unique(mesh.vertices, axis=0, return_inverse=True)
    if len(uniq) == len(mesh.vertices):
        return mesh
    return TriMesh(uniq, inv[mesh.faces])


def sdf_grid(fn, resolution: int, lo: float = -1.0, hi: float = 1.0):
    """Sample fn over a resolution^3 grid on [lo, hi]^3.

    fn takes (B, 3) points and returns (B,) values. Returns
    (field, origin, spacing) ready for marching_cubes.
    """
    axis = np.linspace(lo, hi, resolution)
    spacing = np.full(3, axis[1] - axis[0])
    origin = np.full(3, lo)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    vals = np.empty(len(pts))
    chunk = 65536
    for s in range(0, len(pts), chunk):
        vals[s : s + chunk] = fn(pts[s : s + chunk])
    return vals.reshape(resolution, resolution, resolution), origin, spacing
