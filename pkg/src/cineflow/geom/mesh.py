"""Triangle meshes, point clouds, and similarity transforms."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateInputError, ShapeMismatchError, WatertightError
from ..diffcore import as_f64


class TriMesh:
    """Indexed triangle mesh.

    Vertices are float64 (N, 3); faces are int64 (M, 3) vertex indices.
    Zero-area faces are dropped at construction; watertightness is checked
    lazily and cached (needed before a mesh can act as an SDF oracle).
    """

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = as_f64(vertices, "vertices").reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if validate:
            n = len(self.vertices)
            if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
                raise ShapeMismatchError("face index out of range")
            areas = self.face_areas()
            keep = areas > 0.0
            if not keep.all():
                self.faces = self.faces[keep]
        self._watertight: bool | None = None
        self._cache = {}

    def __repr__(self):
        return f"TriMesh({len(self.vertices)} vertices, {len(self.faces)} faces)"

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(), validate=False)

    def triangles(self) -> np.ndarray:
        """(M, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        tri = self.vertices[self.faces]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if normalize:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_watertight(self) -> bool:
        """Every undirected edge shared by exactly two faces, once per direction."""
        if self._watertight is None:
            edges = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            n = len(self.vertices)
            directed = edges[:, 0] * n + edges[:, 1]
            if len(np.unique(directed)) != len(directed):
                self._watertight = False
            else:
                lo = np.minimum(edges[:, 0], edges[:, 1])
                hi = np.maximum(edges[:, 0], edges[:, 1])
                und = lo * n + hi
                _, counts = np.unique(und, return_counts=True)
                self._watertight = bool((counts == 2).all())
        return self._watertight

    def require_watertight(self, why: str = "operation"):
        if not self.is_watertight():
            raise WatertightError(
                f"{why} requires a watertight mesh (every edge shared by exactly "
                "two faces); winding-number sign would be ill-defined"
            )

    def signed_volume(self) -> float:
        """Divergence-theorem volume (sum of signed tetrahedra to the origin).

        Positive for outward-oriented surfaces; for a shell with an
        inward-facing cavity boundary the cavity subtracts automatically.
        """
        tri = self.vertices[self.faces]
        return float(np.einsum("ij,ij->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0)

    def connected_components(self) -> list[np.ndarray]:
        """Face index arrays, one per connected component (via shared vertices)."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components as cc

        n = len(self.vertices)
        rows = np.concatenate([self.faces[:, 0], self.faces[:, 1], self.faces[:, 2]])
        cols = np.concatenate([self.faces[:, 1], self.faces[:, 2], self.faces[:, 0]])
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = cc(adj, directed=False)
        face_label = labels[self.faces[:, 0]]
        return [np.flatnonzero(face_label == lbl) for lbl in np.unique(face_label)]

    def transformed(self, t: "SimilarityTransform") -> "TriMesh":
        return TriMesh(t.apply_points(self.vertices), self.faces.copy(), validate=False)


class PointCloud:
    """Labeled points: coordinates plus optional per-point phase and slice ids."""

    def __init__(self, points, phase=None, slice_id=None):
        self.points = as_f64(points, "points").reshape(-1, 3)
        if len(self.points) < 1:
            raise ShapeMismatchError("point cloud must contain at least one point")
        self.phase = None if phase is None else np.asarray(phase, dtype=np.int64).ravel()
        self.slice_id = None if slice_id is None else np.asarray(slice_id, dtype=np.int64).ravel()
        for name, lab in (("phase", self.phase), ("slice_id", self.slice_id)):
            if lab is not None and len(lab) != len(self.points):
                raise ShapeMismatchError(f"{name} labels do not match point count")

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"PointCloud({len(self.points)} points)"

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def select(self, mask) -> "PointCloud":
        return PointCloud(
            self.points[mask],
            None if self.phase is None else self.phase[mask],
            None if self.slice_id is None else self.slice_id[mask],
        )

    def transformed(self, t: "SimilarityTransform") -> "PointCloud":
        return PointCloud(t.apply_points(self.points), self.phase, self.slice_id)


class SimilarityTransform:
    """Homogeneous 4x4 transform whose linear part is scale * rotation."""

    def __init__(self, matrix):
        self.matrix = as_f64(matrix, "matrix").reshape(4, 4)
        a = self.matrix[:3, :3]
        det = np.linalg.det(a)
        if det <= 0:
            raise DegenerateInputError("transform has non-positive determinant")
        s = det ** (1.0 / 3.0)
        r = a / s
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise DegenerateInputError("linear part is not scale * rotation (to 1e-9)")
        self.scale = float(s)
        self.rotation = r
        self.translation = self.matrix[:3, 3].copy()

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(4))

    @classmethod
    def from_parts(cls, scale: float, rotation, translation) -> "SimilarityTransform":
        m = np.eye(4)
        m[:3, :3] = float(scale) * np.asarray(rotation, dtype=np.float64)
        m[:3, 3] = np.asarray(translation, dtype=np.float64)
        return cls(m)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]

    def inverse(self) -> "SimilarityTransform":
        inv = np.eye(4)
        a_inv = self.rotation.T / self.scale
        inv[:3, :3] = a_inv
        inv[:3, 3] = -a_inv @ self.translation
        return SimilarityTransform(inv)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return SimilarityTransform(self.matrix @ other.matrix)


def apply_transform(t: SimilarityTransform, geometry):
    """Transform a PointCloud or TriMesh, returning the same type."""
    return geometry.transformed(t)
