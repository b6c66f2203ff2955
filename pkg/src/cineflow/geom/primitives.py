"""Analytic test meshes: icospheres and concentric spherical shells."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return TriMesh(verts * radius, faces)


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    midpoint: dict[tuple[int, int], int] = {}
    new_verts = list(verts)

    def mid(i, j):
        key = (min(i, j), max(i, j))
        if key not in midpoint:
            midpoint[key] = len(new_verts)
            new_verts.append((verts[i] + verts[j]) / 2.0)
        return midpoint[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(new_verts), np.array(new_faces, dtype=np.int64)


def spherical_shell(r_inner: float, r_outer: float, subdivisions: int = 3) -> TriMesh:
    """Thick shell: outer sphere plus inner boundary facing the cavity.

    Solid region is r_inner <= |x| <= r_outer; both boundaries oriented away
    from the solid, so the signed volume is the shell volume.
    """
    outer = icosphere(subdivisions, r_outer)
    inner = icosphere(subdivisions, r_inner)
    inner_faces = inner.faces[:, ::-1] + len(outer.vertices)
    verts = np.vstack([outer.vertices, inner.vertices])
    faces = np.vstack([outer.faces, inner_faces])
    return TriMesh(verts, faces)
