"""The ED-space: a PCA shape prior over registered end-diastolic shapes plus
the canonical spatial normalization all model inputs live in.

Every atlas member shares one topology and vertex ordering, so shapes are
columns of a 3N matrix and the prior is a plain truncated SVD. Sampling the
prior (optionally with Gaussian jitter around real subjects) provides the
augmented training set for shape-model pre-training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AtlasError, ShapeMismatchError
from .geom import PointCloud, TriMesh


@dataclass
class Atlas:
    """End-diastolic shapes in vertex correspondence (identical face arrays)."""

    shapes: list[TriMesh]

    def __post_init__(self):
        if len(self.shapes) < 2:
            raise AtlasError("atlas needs at least 2 shapes")
        faces0 = self.shapes[0].faces
        n0 = len(self.shapes[0].vertices)
        for i, mesh in enumerate(self.shapes[1:], start=1):
            if len(mesh.vertices) != n0 or not np.array_equal(mesh.faces, faces0):
                raise AtlasError(f"atlas member {i} has mismatched topology")

    def __len__(self):
        return len(self.shapes)

    def matrix(self) -> np.ndarray:
        """(3N, S) column-per-shape flattened vertex matrix."""
        return np.stack([m.vertices.ravel() for m in self.shapes], axis=1)


class Ssm:
    """Truncated PCA shape space: x = mean + basis @ alpha."""

    def __init__(self, mean_shape, basis, singular_values, faces, n_training: int,
                 training_alphas=None):
        self.mean_shape = np.asarray(mean_shape, dtype=np.float64).ravel()
        self.basis = np.asarray(basis, dtype=np.float64)
        self.singular_values = np.asarray(singular_values, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        self.n_training = int(n_training)
        self.training_alphas = (
            None if training_alphas is None else np.asarray(training_alphas, dtype=np.float64)
        )
        if self.basis.shape[0] != self.mean_shape.size:
            raise ShapeMismatchError("basis rows must match mean shape length")
        if self.basis.shape[1] != self.singular_values.size:
            raise ShapeMismatchError("one singular value per basis column")

    @property
    def k_alpha(self) -> int:
        return self.basis.shape[1]

    def mean_mesh(self) -> TriMesh:
        return TriMesh(self.mean_shape.reshape(-1, 3), self.faces, validate=False)

    def sample_shape(self, alpha) -> TriMesh:
        alpha = np.asarray(alpha, dtype=np.float64).ravel()
        if alpha.size != self.k_alpha:
            raise ShapeMismatchError(f"alpha must have {self.k_alpha} components")
        flat = self.mean_shape + self.basis @ alpha
        return TriMesh(flat.reshape(-1, 3), self.faces, validate=False)

    def project(self, mesh: TriMesh) -> np.ndarray:
        """Coefficients of the best basis approximation of a shape."""
        return self.basis.T @ (mesh.vertices.ravel() - self.mean_shape)


def build_ssm(atlas: Atlas, k_alpha: int | None = None) -> Ssm:
    """SVD of the centered atlas matrix, truncated to k_alpha modes.

    Default k_alpha is min(S - 1, 32). The centered matrix has rank at most
    S - 1, so k_alpha may not exceed that.
    """
    x = atlas.matrix()
    s_count = x.shape[1]
    if k_alpha is None:
        k_alpha = min(s_count - 1, 32)
    if not (1 <= k_alpha <= s_count - 1):
        raise AtlasError(f"k_alpha must be in [1, {s_count - 1}], got {k_alpha}")
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    u, sing, _ = np.linalg.svd(centered, full_matrices=False)
    basis = u[:, :k_alpha]
    ssm = Ssm(mean, basis, sing[:k_alpha], atlas.shapes[0].faces, s_count)
    ssm.training_alphas = basis.T @ centered  # (K, S): per-shape projections
    return ssm


def augment(ssm: Ssm, count: int, spread: float, rng: np.random.Generator) -> np.ndarray:
    """(count, K) coefficient draws: Gaussian jitter around real projections.

    Each draw picks a training shape uniformly and perturbs its projection
    with per-mode std spread * sigma_i / sqrt(n_training), so synthetic
    variation respects the atlas covariance anisotropy. spread = 0 replays
    the training projections exactly.
    """
    if spread < 0:
        raise ValueError("spread must be non-negative")
    if ssm.training_alphas is None:
        raise AtlasError("SSM carries no training projections; rebuild from an atlas")
    stds = spread * ssm.singular_values / np.sqrt(ssm.n_training)
    picks = rng.integers(0, ssm.training_alphas.shape[1], size=count)
    noise = rng.standard_normal((count, ssm.k_alpha)) * stds
    return ssm.training_alphas.T[picks] + noise


@dataclass
class NormalizationSpec:
    """Canonical frame: x -> (x - center) / scale.

    Computed once from the SSM mean shape so that it fits in the sphere of
    radius 0.9, then reused for every shape, observation, and sample.
    """

    center: np.ndarray
    scale: float

    @classmethod
    def from_mean_shape(cls, ssm: Ssm, radius: float = 0.9) -> "NormalizationSpec":
        verts = ssm.mean_shape.reshape(-1, 3)
        center = verts.mean(axis=0)
        extent = np.linalg.norm(verts - center, axis=1).max()
        return cls(center=center, scale=float(extent / radius))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.scale

    def invert_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.center


def normalize(geometry, spec: NormalizationSpec):
    """Map a TriMesh or PointCloud into the canonical frame (same type out)."""
    if isinstance(geometry, TriMesh):
        return TriMesh(spec.apply_points(geometry.vertices), geometry.faces.copy(), validate=False)
    if isinstance(geometry, PointCloud):
        return PointCloud(spec.apply_points(geometry.points), geometry.phase, geometry.slice_id)
    return spec.apply_points(geometry)


def denormalize(geometry, spec: NormalizationSpec):
    if isinstance(geometry, TriMesh):
        return TriMesh(spec.invert_points(geometry.vertices), geometry.faces.copy(), validate=False)
    if isinstance(geometry, PointCloud):
        return PointCloud(spec.invert_points(geometry.points), geometry.phase, geometry.slice_id)
    return spec.invert_points(geometry)
