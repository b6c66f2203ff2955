"""Mesh/plane intersection into closed contour polylines.

Cross-sections are chained through shared mesh edges (exact combinatorial
connectivity, no floating-point matching), so a watertight mesh always
yields closed loops. This produces the sparse per-slice contour modality
the reconstruction consumes.
"""

from __future__ import annotations

import numpy as np

from .mesh import PointCloud, TriMesh


def slice_contours(mesh: TriMesh, origin, normal) -> list[np.ndarray]:
    """Closed intersection polylines of the mesh with one plane.

    Returns one (P, 3) array per loop, ordered around the loop, unresampled
    (one point per crossed mesh edge). Empty list when the plane misses.
    """
    origin = np.asarray(origin, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    s = (mesh.vertices - origin) @ normal
    # nudge exact-plane vertices so every crossing is a strict sign change
    eps = 1e-12 * max(np.abs(s).max(), 1.0)
    s = np.where(np.abs(s) < eps, eps, s)

    faces = mesh.faces
    sf = s[faces]  # (M, 3)
    neg = sf < 0
    n_neg = neg.sum(axis=1)
    crossing = (n_neg == 1) | (n_neg == 2)
    if not crossing.any():
        return []

    # per crossing face: the two crossed edges, keyed by sorted vertex pair
    loops_points: dict[tuple[int, int], np.ndarray] = {}
    adjacency: dict[tuple[int, int], list[tuple[int, int]]] = {}
    verts = mesh.vertices
    for f in np.flatnonzero(crossing):
        vi = faces[f]
        keys = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            va, vb = vi[a], vi[b]
            if (s[va] < 0) != (s[vb] < 0):
                key = (int(min(va, vb)), int(max(va, vb)))
                keys.append(key)
                if key not in loops_points:
                    t = s[va] / (s[va] - s[vb])
                    loops_points[key] = verts[va] + t * (verts[vb] - verts[va])
        k0, k1 = keys  # transversal face crosses exactly two edges
        adjacency.setdefault(k0, []).append(k1)
        adjacency.setdefault(k1, []).append(k0)

    loops = []
    visited: set[tuple[int, int]] = set()
    for start in sorted(adjacency):
        if start in visited:
            continue
        chain = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            nbrs = adjacency[cur]
            nxt = nbrs[0] if nbrs[0] != prev else nbrs[1] if len(nbrs) > 1 else None
            if nxt is None or nxt == start or nxt in visited:
                break
            chain.append(nxt)
            visited.add(nxt)
            prev, cur = cur, nxt
        if len(chain) >= 3:
            loops.append(np.array([loops_points[k] for k in chain]))
    return loops


def resample_closed(loop: np.ndarray, n: int) -> np.ndarray:
    """Resample a closed polyline to n points uniformly spaced by arclength."""
    closed = np.vstack([loop, loop[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    targets = np.arange(n) * total / n
    out = np.empty((n, 3))
    for d in range(3):
        out[:, d] = np.interp(targets, arc, closed[:, d])
    return out


def slice_mesh(mesh: TriMesh, planes, samples_per_contour: int) -> PointCloud | None:
    """Contour point clouds of the mesh on each plane, with slice labels.

    ``planes`` is a list of (origin, unit normal). Each intersection loop is
    resampled to ``samples_per_contour`` points. Planes that miss the mesh
    contribute nothing; returns None if every plane misses.
    """
    pts = []
    sids = []
    for sid, (origin, normal) in enumerate(planes):
        for loop in slice_contours(mesh, origin, normal):
            res = resample_closed(loop, samples_per_contour)
            pts.append(res)
            sids.append(np.full(len(res), sid, dtype=np.int64))
    if not pts:
        return None
    return PointCloud(np.vstack(pts), slice_id=np.concatenate(sids))
