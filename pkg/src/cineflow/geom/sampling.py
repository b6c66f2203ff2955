"""Random point sampling on and around meshes."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """n area-weighted uniform samples on the mesh surface."""
    areas = mesh.face_areas()
    probs = areas / areas.sum()
    idx = rng.choice(len(mesh.faces), size=n, p=probs)
    tri = mesh.vertices[mesh.faces[idx]]
    # uniform barycentric via the square-root trick
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    return a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]


def uniform_in_box(n: int, rng: np.random.Generator, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    return rng.uniform(lo, hi, size=(n, 3))
