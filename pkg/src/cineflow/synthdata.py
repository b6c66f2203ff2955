"""Synthetic 4D myocardium generator.

Subjects are truncated-ellipsoid thick shells (outer wall, inner wall, base
rim) that contract and twist over a 25-phase cycle through a closed-form,
analytically invertible warp. The warp doubles as an exact correspondence
oracle, and the meshes double as exact SDF oracles, which is what lets the
whole pipeline be validated without any real imaging data.

All subjects share one surface parameterization, so end-diastolic meshes are
in vertex correspondence by construction and can feed the shape atlas
directly. Units are millimetres until shapes are normalized into the
canonical frame.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .edspace import Atlas
from .errors import DatasetError
from .geom import PointCloud, TriMesh
from .geom.slicing import resample_closed, slice_contours
from .observations import SliceObservation, SliceRecord
from .seeds import substream

MESH_ROWS = 18  # polar samples per surface (plus the apex vertex)
MESH_COLS = 40  # azimuthal samples


@dataclass
class SubjectParams:
    """Anatomy and motion parameters of one synthetic subject."""

    outer_axes: tuple[float, float, float]  # ellipsoid semi-axes, mm
    wall_base: float  # wall thickness at the base, mm
    wall_apex: float  # wall thickness at the apex, mm
    trunc_frac: float  # base plane height as a fraction of the long semi-axis
    bulge: float  # azimuthal radius asymmetry amplitude
    bulge_phase: float  # azimuth of the bulge, radians
    contraction: float  # peak radial contraction, fraction
    twist: float  # peak apex twist, radians
    long_axis_shortening: float = 0.6  # axial vs radial contraction ratio
    es_frac: float = 0.35  # end-systole position in the cycle
    t_n: int = 25

    def __post_init__(self):
        self.validate()

    def validate(self):
        a, b, c = self.outer_axes
        if min(a, b, c) <= 0:
            raise DatasetError("outer semi-axes must be positive")
        if not (0 < self.trunc_frac < 0.8):
            raise DatasetError("truncation fraction out of range")
        if self.wall_apex >= c * (1.0 - self.trunc_frac):
            raise DatasetError("apex wall thickness swallows the cavity")
        if self.wall_base >= min(a, b) * 0.8 or min(self.wall_base, self.wall_apex) <= 0:
            raise DatasetError("base wall thickness out of range")
        if not (0.0 <= self.contraction <= 0.5):
            raise DatasetError("contraction amplitude must lie in [0, 0.5]")
        if abs(self.bulge) > 0.12:
            raise DatasetError("bulge amplitude too large; shell may self-intersect")
        if self.t_n < 2:
            raise DatasetError("need at least two phases")

    @property
    def es_index(self) -> int:
        return int(round(self.es_frac * self.t_n))


def _cycle_weight(tau: np.ndarray | float, es_tau: float) -> np.ndarray | float:
    """Raised-cosine systole bump: 0 at ED, 1 at ES, back to 0 at cycle end."""
    tau = np.asarray(tau, dtype=np.float64)
    up = 0.5 * (1.0 - np.cos(np.pi * np.clip(tau / es_tau, 0.0, 1.0)))
    down = 0.5 * (1.0 + np.cos(np.pi * np.clip((tau - es_tau) / (1.0 - es_tau), 0.0, 1.0)))
    return np.where(tau <= es_tau, up, down)


class SubjectSequence:
    """One subject's full cycle: meshes plus the analytic warp."""

    def __init__(self, params: SubjectParams, subject_id: str = "subject"):
        self.params = params
        self.subject_id = subject_id
        self.t_n = params.t_n
        self.es_index = params.es_index
        self.taus = np.arange(self.t_n) / self.t_n
        self._z_cut = params.trunc_frac * params.outer_axes[2]
        self._z_len = self._z_cut + params.outer_axes[2]
        ed = _shell_mesh(params)
        self.meshes = [TriMesh(self.warp_from_ed(i, ed.vertices), ed.faces, validate=False)
                       for i in range(self.t_n)]
        if not self.meshes[0].is_watertight() or self.meshes[0].signed_volume() <= 0:
            raise DatasetError("generated shell is not a valid solid")

    @property
    def ed_mesh(self) -> TriMesh:
        return self.meshes[0]

    def _scales(self, i: int) -> tuple[float, float, float]:
        w = float(_cycle_weight(self.taus[i], self.params.es_frac))
        s_r = 1.0 - self.params.contraction * w
        s_z = 1.0 - self.params.long_axis_shortening * self.params.contraction * w
        return s_r, s_z, w

    def _twist_angle(self, z_scaled: np.ndarray, s_z: float, w: float) -> np.ndarray:
        # linear in depth below the (scaled) base plane: zero at base, max at apex
        depth = (self._z_cut * s_z - z_scaled) / (self._z_len * s_z)
        return self.params.twist * w * depth

    def warp_from_ed(self, i: int, points: np.ndarray) -> np.ndarray:
        """Analytic map from the ED configuration to phase i."""
        s_r, s_z, w = self._scales(i)
        q = np.asarray(points, dtype=np.float64) * np.array([s_r, s_r, s_z])
        psi = self._twist_angle(q[:, 2], s_z, w)
        cos_p, sin_p = np.cos(psi), np.sin(psi)
        out = q.copy()
        out[:, 0] = cos_p * q[:, 0] - sin_p * q[:, 1]
        out[:, 1] = sin_p * q[:, 0] + cos_p * q[:, 1]
        return out

    def warp_to_ed(self, i: int, points: np.ndarray) -> np.ndarray:
        """Exact inverse of warp_from_ed (twist preserves z)."""
        s_r, s_z, w = self._scales(i)
        q = np.asarray(points, dtype=np.float64)
        psi = self._twist_angle(q[:, 2], s_z, w)
        cos_p, sin_p = np.cos(psi), np.sin(psi)
        out = q.copy()
        out[:, 0] = cos_p * q[:, 0] + sin_p * q[:, 1]
        out[:, 1] = -sin_p * q[:, 0] + cos_p * q[:, 1]
        return out / np.array([s_r, s_r, s_z])

    def track(self, i: int, j: int, points: np.ndarray) -> np.ndarray:
        """Ground-truth correspondence: phase i -> ED -> phase j."""
        return self.warp_from_ed(j, self.warp_to_ed(i, points))


def _shell_mesh(params: SubjectParams) -> TriMesh:
    a, b, c = params.outer_axes
    z_cut = params.trunc_frac * c
    inner_axes = (a - params.wall_base, b - params.wall_base, c - params.wall_apex)

    outer_v = _truncated_ellipsoid_vertices(a, b, c, z_cut, params)
    inner_v = _truncated_ellipsoid_vertices(*inner_axes, z_cut, params)
    n = len(outer_v)
    verts = np.vstack([outer_v, inner_v])

    outer_f = _surface_faces(0, outward=True)
    inner_f = _surface_faces(n, outward=False)
    rim_f = _rim_faces(0, n)
    return TriMesh(verts, np.vstack([outer_f, inner_f, rim_f]), validate=False)


def _truncated_ellipsoid_vertices(a, b, c, z_cut, params: SubjectParams) -> np.ndarray:
    u_cut = np.arccos(z_cut / c)
    u = u_cut + (np.pi - u_cut) * np.arange(MESH_ROWS) / MESH_ROWS
    phi = 2.0 * np.pi * np.arange(MESH_COLS) / MESH_COLS
    uu, pp = np.meshgrid(u, phi, indexing="ij")
    radial = 1.0 + params.bulge * np.sin(uu) * np.cos(pp - params.bulge_phase)
    x = a * np.sin(uu) * np.cos(pp) * radial
    y = b * np.sin(uu) * np.sin(pp) * radial
    z = c * np.cos(uu)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    apex = np.array([[0.0, 0.0, -c]])
    return np.vstack([verts, apex])


def _surface_faces(offset: int, outward: bool) -> np.ndarray:
    faces = []
    cols = MESH_COLS
    for i in range(MESH_ROWS - 1):
        for j in range(cols):
            v00 = offset + i * cols + j
            v01 = offset + i * cols + (j + 1) % cols
            v10 = offset + (i + 1) * cols + j
            v11 = offset + (i + 1) * cols + (j + 1) % cols
            faces.append([v00, v11, v01])
            faces.append([v00, v10, v11])
    apex = offset + MESH_ROWS * cols
    last = MESH_ROWS - 1
    for j in range(cols):
        v0 = offset + last * cols + j
        v1 = offset + last * cols + (j + 1) % cols
        faces.append([v0, apex, v1])
    faces = np.array(faces, dtype=np.int64)
    if not outward:
        faces = faces[:, ::-1]
    return faces


def _rim_faces(outer_offset: int, inner_offset: int) -> np.ndarray:
    faces = []
    cols = MESH_COLS
    for j in range(cols):
        o0 = outer_offset + j
        o1 = outer_offset + (j + 1) % cols
        i0 = inner_offset + j
        i1 = inner_offset + (j + 1) % cols
        faces.append([o0, i1, i0])
        faces.append([o0, o1, i1])
    return np.array(faces, dtype=np.int64)


def generate_subject(params: SubjectParams, subject_id: str = "subject") -> SubjectSequence:
    return SubjectSequence(params, subject_id)


def random_params(rng: np.random.Generator, t_n: int = 25) -> SubjectParams:
    a = rng.uniform(26.0, 34.0)
    return SubjectParams(
        outer_axes=(a, a * rng.uniform(0.86, 0.96), rng.uniform(42.0, 52.0)),
        wall_base=rng.uniform(8.0, 12.0),
        wall_apex=rng.uniform(5.0, 8.0),
        trunc_frac=rng.uniform(0.40, 0.50),
        bulge=rng.uniform(0.02, 0.06),
        bulge_phase=rng.uniform(0.0, 2.0 * np.pi),
        contraction=rng.uniform(0.12, 0.30),
        twist=rng.uniform(0.02, 0.06),
        t_n=t_n,
    )


def make_atlas(n_subjects: int, seed: int, t_n: int = 25) -> Atlas:
    """ED-phase meshes of n random subjects, in shared vertex correspondence."""
    shapes = []
    for i in range(n_subjects):
        params = random_params(substream(seed, "atlas", str(i)), t_n=t_n)
        shapes.append(generate_subject(params, f"atlas_{i:03d}").ed_mesh)
    return Atlas(shapes)


def make_dataset(n_subjects: int, seed: int, t_n: int = 25, tag: str = "train") -> list[SubjectSequence]:
    return [
        generate_subject(
            random_params(substream(seed, "dataset", tag, str(i)), t_n=t_n),
            f"{tag}_{i:03d}",
        )
        for i in range(n_subjects)
    ]


def sax_planes(seq: SubjectSequence, n_slices: int = 9, spacing: float = 10.0):
    """Short-axis planes: parallel, normal to the long axis, fixed across phases.

    The stack is centered on the shell; when the requested spacing would push
    the outer slices past the apex or base, it shrinks so all slices hit.
    """
    z_lo = -seq.params.outer_axes[2]
    z_hi = seq._z_cut
    mid = 0.5 * (z_lo + z_hi)
    if n_slices > 1:
        spacing = min(spacing, 0.92 * (z_hi - z_lo) / (n_slices - 1))
    normal = np.array([0.0, 0.0, 1.0])
    return [
        (np.array([0.0, 0.0, mid + (k - (n_slices - 1) / 2.0) * spacing]), normal)
        for k in range(n_slices)
    ]


def lax_planes(seq: SubjectSequence, n_planes: int = 2):
    """Long-axis planes containing the long axis, spread in azimuth."""
    planes = []
    for k in range(n_planes):
        alpha = np.pi * k / max(n_planes, 1)
        normal = np.array([-np.sin(alpha), np.cos(alpha), 0.0])
        planes.append((np.zeros(3), normal))
    return planes


def _observe(seq, planes, phases, samples_per_contour, noise, rng) -> SliceObservation:
    records = []
    for phase in phases:
        mesh = seq.meshes[phase]
        for sid, (origin, normal) in enumerate(planes):
            loops = slice_contours(mesh, origin, normal)
            if not loops:
                continue
            pts = np.vstack([resample_closed(lp, samples_per_contour) for lp in loops])
            if noise > 0:
                pts = pts + rng.normal(0.0, noise, size=pts.shape)
            records.append(SliceRecord(phase, sid, np.asarray(origin, float), np.asarray(normal, float), pts))
    return SliceObservation(records, t_n=seq.t_n)


def make_cmr_observations(
    seq: SubjectSequence,
    n_slices: int = 9,
    spacing: float = 10.0,
    samples_per_contour: int = 32,
    n_lax: int = 0,
    noise: float = 0.0,
    seed: int = 0,
) -> SliceObservation:
    """CMR-like sparse sampling: a SAX stack (plus optional LAX planes), all phases."""
    planes = sax_planes(seq, n_slices, spacing) + lax_planes(seq, n_lax)
    rng = substream(seed, "obs-noise", seq.subject_id)
    return _observe(seq, planes, range(seq.t_n), samples_per_contour, noise, rng)


def make_ct_observations(
    seq: SubjectSequence,
    spacing: float = 1.0,
    samples_per_contour: int = 32,
    noise: float = 0.0,
    seed: int = 0,
    planes=None,
) -> SliceObservation:
    """CT-like sampling: dense slicing, but only the ED and ES phases."""
    if planes is None:
        height = seq._z_len
        planes = sax_planes(seq, int(height / spacing), spacing)
    rng = substream(seed, "obs-noise-ct", seq.subject_id)
    return _observe(seq, planes, [0, seq.es_index], samples_per_contour, noise, rng)
