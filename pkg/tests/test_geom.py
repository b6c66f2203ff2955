import numpy as np
import pytest

from cineflow.errors import DegenerateInputError, ShapeMismatchError, WatertightError
from cineflow.geom import (
    MeshSdf,
    PointCloud,
    SimilarityTransform,
    TriMesh,
    alignment_residual,
    apply_transform,
    icosphere,
    marching_cubes,
    register_similarity,
    resample_closed,
    sample_surface,
    sdf_grid,
    signed_distance,
    slice_contours,
    slice_mesh,
    spherical_shell,
    umeyama,
)

from oracles import signed_distance_brute, trilinear


@pytest.fixture(scope="module")
def sphere():
    return icosphere(4)


@pytest.fixture(scope="module")
def shell():
    return spherical_shell(0.7, 1.0, 3)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestSignedDistance:
    def test_sphere_center(self, sphere):
        assert abs(signed_distance(sphere, np.zeros(3)) + 1.0) <= 2e-3

    def test_on_vertex_is_zero(self, sphere):
        assert signed_distance(sphere, sphere.vertices[17]) == 0.0

    def test_matches_brute_force_oracle(self, shell):
        rng = np.random.default_rng(7)
        queries = rng.uniform(-1.3, 1.3, size=(60, 3))
        fast = signed_distance(shell, queries)
        for q, f in zip(queries, fast):
            assert abs(f - signed_distance_brute(shell, q)) < 1e-12

    def test_one_lipschitz(self, shell):
        rng = np.random.default_rng(8)
        p = rng.uniform(-1.2, 1.2, size=(200, 3))
        q = rng.uniform(-1.2, 1.2, size=(200, 3))
        dp = signed_distance(shell, p)
        dq = signed_distance(shell, q)
        gap = np.linalg.norm(p - q, axis=1)
        assert np.all(np.abs(dp - dq) <= gap + 1e-12)

    def test_refuses_open_mesh(self, sphere):
        holed = TriMesh(sphere.vertices, sphere.faces[1:])
        with pytest.raises(WatertightError):
            signed_distance(holed, np.zeros(3))

    def test_shell_sign_structure(self, shell):
        # outside, in the wall, in the cavity
        assert signed_distance(shell, np.array([1.5, 0, 0])) > 0
        assert signed_distance(shell, np.array([0.85, 0, 0])) < 0
        assert signed_distance(shell, np.array([0.1, 0, 0])) > 0


class TestMarchingCubes:
    def test_analytic_sphere_vertex_radius(self):
        field, origin, spacing = sdf_grid(lambda p: np.linalg.norm(p, axis=1) - 1.0, 64)
        mesh = marching_cubes(field, 0.0, origin, spacing)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert np.abs(radii - 1.0).max() <= 0.055  # one cell diagonal

    def test_linear_field_gives_exact_plane(self):
        ax = np.linspace(-1.0, 1.0, 32)
        field = np.broadcast_to(ax[:, None, None], (32, 32, 32)).copy()
        mesh = marching_cubes(field, 0.0, np.full(3, -1.0), np.full(3, ax[1] - ax[0]))
        assert len(mesh.vertices) > 0
        assert np.abs(mesh.vertices[:, 0]).max() < 1e-9

    def test_constant_sign_gives_empty_mesh(self):
        mesh = marching_cubes(np.ones((4, 4, 4)), 0.0)
        assert len(mesh.vertices) == 0 and len(mesh.faces) == 0

    def test_vertices_lie_on_zero_level_by_interpolation(self):
        field, origin, spacing = sdf_grid(lambda p: np.linalg.norm(p, axis=1) - 0.8, 24)
        mesh = marching_cubes(field, 0.0, origin, spacing)
        vals = trilinear(field, origin, spacing, mesh.vertices)
        assert np.abs(vals).max() < 1e-9

    def test_orientation_points_to_increasing_field(self):
        field, origin, spacing = sdf_grid(lambda p: np.linalg.norm(p, axis=1) - 0.8, 24)
        mesh = marching_cubes(field, 0.0, origin, spacing)
        normals = mesh.face_normals()
        centers = mesh.vertices[mesh.faces].mean(axis=1)
        assert np.all(np.einsum("ij,ij->i", normals, centers) > 0)

    def test_output_is_watertight(self):
        field, origin, spacing = sdf_grid(lambda p: np.linalg.norm(p, axis=1) - 0.8, 32)
        assert marching_cubes(field, 0.0, origin, spacing).is_watertight()

    def test_rejects_tiny_grid(self):
        with pytest.raises(ShapeMismatchError):
            marching_cubes(np.ones((1, 4, 4)), 0.0)


class TestTransforms:
    def test_identity(self):
        pc = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
        out = apply_transform(SimilarityTransform.identity(), pc)
        assert np.array_equal(out.points, pc.points)

    def test_apply_then_inverse_is_identity(self):
        rng = np.random.default_rng(9)
        t = SimilarityTransform.from_parts(1.3, random_rotation(rng), rng.normal(size=3))
        pc = PointCloud(rng.normal(size=(50, 3)))
        back = apply_transform(t.inverse(), apply_transform(t, pc))
        assert np.abs(back.points - pc.points).max() < 1e-12

    def test_pure_translation_shifts_centroid(self):
        rng = np.random.default_rng(10)
        t_vec = np.array([0.5, -1.0, 2.0])
        t = SimilarityTransform.from_parts(1.0, np.eye(3), t_vec)
        pc = PointCloud(rng.normal(size=(40, 3)))
        moved = apply_transform(t, pc)
        assert np.abs(moved.centroid() - (pc.centroid() + t_vec)).max() < 1e-12

    def test_rejects_sheared_matrix(self):
        m = np.eye(4)
        m[0, 1] = 0.5
        with pytest.raises(DegenerateInputError):
            SimilarityTransform(m)


class TestRegistration:
    def test_already_aligned_gives_identity(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(120, 3)) * np.array([3.0, 1.5, 0.8])
        t = register_similarity(PointCloud(pts), PointCloud(pts))
        assert abs(t.scale - 1.0) < 1e-9
        assert np.abs(t.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(t.translation).max() < 1e-9

    def test_recovers_known_similarity(self):
        rng = np.random.default_rng(12)
        src = rng.normal(size=(150, 3)) * np.array([3.0, 1.5, 0.8])
        truth = SimilarityTransform.from_parts(1.3, random_rotation(rng), np.array([2.0, -1.0, 0.5]))
        tgt = truth.apply_points(src)
        t = register_similarity(PointCloud(src), PointCloud(tgt))
        assert abs(t.scale - truth.scale) < 1e-6
        assert np.abs(t.rotation - truth.rotation).max() < 1e-6
        assert np.abs(t.translation - truth.translation).max() < 1e-5
        assert alignment_residual(t, PointCloud(src), PointCloud(tgt)) < 1e-6

    def test_noise_floor(self):
        rng = np.random.default_rng(13)
        sigma = 0.01
        src = rng.normal(size=(400, 3)) * np.array([3.0, 1.5, 0.8])
        tgt = src + rng.normal(0.0, sigma, size=src.shape)
        t = register_similarity(PointCloud(src), PointCloud(tgt))
        assert alignment_residual(t, PointCloud(src), PointCloud(tgt)) <= 2 * sigma

    def test_rigid_motion_invariance_of_residual(self):
        rng = np.random.default_rng(14)
        src = rng.normal(size=(100, 3)) * np.array([2.0, 1.0, 0.6])
        tgt = src * 1.1 + rng.normal(0, 0.02, size=src.shape)
        t1 = register_similarity(PointCloud(src), PointCloud(tgt))
        r1 = alignment_residual(t1, PointCloud(src), PointCloud(tgt))
        motion = SimilarityTransform.from_parts(1.0, random_rotation(rng), rng.normal(size=3))
        src2 = motion.apply_points(src)
        tgt2 = motion.apply_points(tgt)
        t2 = register_similarity(PointCloud(src2), PointCloud(tgt2))
        r2 = alignment_residual(t2, PointCloud(src2), PointCloud(tgt2))
        assert abs(r1 - r2) < 1e-9

    def test_mesh_target_from_surface_samples(self, sphere):
        rng = np.random.default_rng(15)
        pts = sample_surface(sphere, 300, rng)
        t = register_similarity(PointCloud(pts), sphere)
        assert alignment_residual(t, PointCloud(pts), sphere) < 1e-3

    def test_coplanar_source_rejected(self):
        pts = np.zeros((10, 3))
        pts[:, :2] = np.random.default_rng(16).normal(size=(10, 2))
        with pytest.raises(DegenerateInputError):
            register_similarity(PointCloud(pts), PointCloud(pts + 0.1))

    def test_rigid_mode_keeps_unit_scale(self):
        rng = np.random.default_rng(17)
        src = rng.normal(size=(100, 3)) * np.array([2.0, 1.0, 0.5])
        truth = SimilarityTransform.from_parts(1.0, random_rotation(rng), rng.normal(size=3))
        t = register_similarity(PointCloud(src), PointCloud(truth.apply_points(src)), with_scale=False)
        assert t.scale == pytest.approx(1.0, abs=1e-12)
        assert np.abs(t.rotation - truth.rotation).max() < 1e-6

    def test_umeyama_exact_on_paired_points(self):
        rng = np.random.default_rng(18)
        src = rng.normal(size=(20, 3))
        truth = SimilarityTransform.from_parts(0.7, random_rotation(rng), rng.normal(size=3))
        t = umeyama(src, truth.apply_points(src))
        assert np.abs(t.matrix - truth.matrix).max() < 1e-9


class TestSlicing:
    def test_sphere_equator_circle(self, sphere):
        loops = slice_contours(sphere, np.zeros(3), np.array([0.0, 0.0, 1.0]))
        assert len(loops) == 1
        radii = np.linalg.norm(loops[0][:, :2], axis=1)
        assert np.abs(radii - 1.0).max() < 1e-3
        assert np.abs(loops[0][:, 2]).max() < 1e-9

    def test_plane_outside_gives_nothing(self, sphere):
        assert slice_contours(sphere, np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 1.0])) == []
        assert slice_mesh(sphere, [(np.array([0, 0, 2.0]), np.array([0, 0, 1.0]))], 32) is None

    def test_shell_gives_two_concentric_circles(self, shell):
        loops = slice_contours(shell, np.zeros(3), np.array([0.0, 0.0, 1.0]))
        assert len(loops) == 2
        mean_radii = sorted(np.linalg.norm(lp[:, :2], axis=1).mean() for lp in loops)
        assert abs(mean_radii[0] - 0.7) < 5e-3
        assert abs(mean_radii[1] - 1.0) < 5e-3

    def test_resampled_point_count_and_labels(self, shell):
        planes = [(np.array([0, 0, 0.0]), np.array([0, 0, 1.0])),
                  (np.array([0, 0, 0.3]), np.array([0, 0, 1.0]))]
        pc = slice_mesh(shell, planes, 40)
        assert len(pc) == 4 * 40  # two loops per plane
        assert set(np.unique(pc.slice_id)) == {0, 1}

    def test_resample_closed_preserves_shape(self):
        theta = np.linspace(0, 2 * np.pi, 100, endpoint=False)
        loop = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=1)
        res = resample_closed(loop, 17)
        assert res.shape == (17, 3)
        assert np.abs(np.linalg.norm(res[:, :2], axis=1) - 1.0).max() < 3e-3


class TestMeshBasics:
    def test_icosphere_volume(self):
        mesh = icosphere(4)
        assert abs(mesh.signed_volume() - 4 * np.pi / 3) / (4 * np.pi / 3) < 0.005

    def test_shell_volume(self, shell):
        expected = 4 * np.pi / 3 * (1 - 0.343)
        assert abs(shell.signed_volume() - expected) / expected < 0.01

    def test_flipped_faces_negate_volume(self, sphere):
        flipped = TriMesh(sphere.vertices, sphere.faces[:, ::-1])
        assert flipped.signed_volume() < 0

    def test_connected_components(self, shell):
        comps = shell.connected_components()
        assert len(comps) == 2

    def test_degenerate_faces_dropped(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        faces = np.array([[0, 1, 2], [0, 0, 1]])
        mesh = TriMesh(verts, faces)
        assert len(mesh.faces) == 1
