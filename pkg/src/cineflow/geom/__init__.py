"""Explicit geometry: meshes, point clouds, signed distances, isosurfacing,
registration, and plane slicing."""

from .mesh import PointCloud, SimilarityTransform, TriMesh, apply_transform
from .sdf import MeshSdf, signed_distance
from .marching import marching_cubes, sdf_grid
from .registration import alignment_residual, register_similarity, umeyama
from .slicing import resample_closed, slice_contours, slice_mesh
from .primitives import icosphere, spherical_shell
from .sampling import sample_surface, uniform_in_box
from . import io

__all__ = [
    "PointCloud",
    "SimilarityTransform",
    "TriMesh",
    "apply_transform",
    "MeshSdf",
    "signed_distance",
    "marching_cubes",
    "sdf_grid",
    "register_similarity",
    "alignment_residual",
    "umeyama",
    "slice_mesh",
    "slice_contours",
    "resample_closed",
    "icosphere",
    "spherical_shell",
    "sample_surface",
    "uniform_in_box",
    "io",
]
