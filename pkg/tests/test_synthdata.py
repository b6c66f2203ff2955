import numpy as np
import pytest

from cineflow.errors import AtlasError, DatasetError
from cineflow.geom import signed_distance
from cineflow.metrics import chamfer, volume_curve
from cineflow.observations import SliceObservation
from cineflow.seeds import substream
from cineflow.synthdata import (
    SubjectParams,
    generate_subject,
    make_atlas,
    make_cmr_observations,
    make_ct_observations,
    random_params,
    sax_planes,
)


@pytest.fixture(scope="module")
def subject():
    return generate_subject(random_params(substream(100, "p")), "unit")


class TestGenerator:
    def test_zero_contraction_freezes_all_phases(self):
        params = random_params(substream(101, "p"))
        from dataclasses import replace

        frozen = replace(params, contraction=0.0, twist=0.0)
        seq = generate_subject(frozen)
        for mesh in seq.meshes[1:]:
            assert np.abs(mesh.vertices - seq.ed_mesh.vertices).max() < 1e-12

    def test_volume_minimum_exactly_at_es(self, subject):
        vols = volume_curve(subject.meshes)
        assert int(np.argmin(vols)) == subject.es_index

    def test_warp_round_trip(self, subject):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-30, 30, size=(100, 3))
        for i in (1, subject.es_index, subject.t_n - 1):
            back = subject.warp_to_ed(i, subject.warp_from_ed(i, pts))
            assert np.abs(back - pts).max() < 1e-9

    def test_warped_vertices_lie_on_phase_mesh(self, subject):
        rng = np.random.default_rng(1)
        idx = rng.choice(len(subject.ed_mesh.vertices), 40, replace=False)
        pts = subject.ed_mesh.vertices[idx]
        sd = signed_distance(subject.meshes[subject.es_index],
                             subject.warp_from_ed(subject.es_index, pts))
        assert np.abs(sd).max() <= 1e-6

    def test_all_phases_watertight_and_positive(self, subject):
        for mesh in subject.meshes:
            assert mesh.is_watertight()
            assert mesh.signed_volume() > 0

    def test_deterministic_under_seed(self):
        s1 = generate_subject(random_params(substream(7, "p")))
        s2 = generate_subject(random_params(substream(7, "p")))
        assert np.array_equal(s1.ed_mesh.vertices, s2.ed_mesh.vertices)

    def test_invalid_params_rejected(self):
        with pytest.raises(DatasetError):
            SubjectParams(
                outer_axes=(30.0, 28.0, 45.0),
                wall_base=10.0,
                wall_apex=30.0,  # swallows the cavity
                trunc_frac=0.45,
                bulge=0.03,
                bulge_phase=0.0,
                contraction=0.2,
                twist=0.05,
            )
        with pytest.raises(DatasetError):
            SubjectParams(
                outer_axes=(30.0, 28.0, 45.0),
                wall_base=10.0,
                wall_apex=6.0,
                trunc_frac=0.45,
                bulge=0.03,
                bulge_phase=0.0,
                contraction=0.7,  # out of range
                twist=0.05,
            )


class TestAtlas:
    def test_single_shape_rejected_by_atlas(self):
        with pytest.raises(AtlasError):
            make_atlas(1, seed=0)

    def test_deterministic(self):
        a1 = make_atlas(3, seed=5)
        a2 = make_atlas(3, seed=5)
        for m1, m2 in zip(a1.shapes, a2.shapes):
            assert np.array_equal(m1.vertices, m2.vertices)

    def test_nondegenerate_variation(self):
        atlas = make_atlas(4, seed=6)
        for i in range(len(atlas)):
            for j in range(i + 1, len(atlas)):
                assert chamfer(atlas.shapes[i].vertices, atlas.shapes[j].vertices) > 0.1


class TestObservations:
    def test_cmr_slice_coverage(self, subject):
        obs = make_cmr_observations(subject, n_slices=9)
        for phase in range(subject.t_n):
            slices = {r.slice_id for r in obs.records if r.phase == phase}
            assert len(slices) >= 8

    def test_mid_slices_have_inner_and_outer_contours(self, subject):
        from cineflow.geom.slicing import slice_contours

        z_mid = 0.0
        loops = slice_contours(subject.ed_mesh, np.array([0, 0, z_mid]), np.array([0, 0, 1.0]))
        assert len(loops) == 2

    def test_points_lie_on_source_mesh(self, subject):
        obs = make_cmr_observations(subject, n_slices=9)
        rec = obs.records[len(obs.records) // 2]
        sd = signed_distance(subject.meshes[rec.phase], rec.points)
        assert np.abs(sd).max() < 1e-9

    def test_lax_adds_long_axis_planes(self, subject):
        obs = make_cmr_observations(subject, n_slices=9, n_lax=2)
        base = make_cmr_observations(subject, n_slices=9)
        assert len({r.slice_id for r in obs.records}) == len({r.slice_id for r in base.records}) + 2
        # the added planes contain the long axis: normals orthogonal to z
        lax_ids = sorted({r.slice_id for r in obs.records})[-2:]
        for r in obs.records:
            if r.slice_id in lax_ids:
                assert abs(r.normal[2]) < 1e-12

    def test_ct_keeps_only_ed_and_es(self, subject):
        obs = make_ct_observations(subject)
        assert obs.phases == [0, subject.es_index]

    def test_ct_at_cmr_planes_shares_ed_points(self, subject):
        planes = sax_planes(subject, 9, 10.0)
        cmr = make_cmr_observations(subject, n_slices=9)
        ct = make_ct_observations(subject, planes=planes)
        assert np.array_equal(ct.points_for_phase(0), cmr.points_for_phase(0))

    def test_ct_denser_than_cmr(self, subject):
        cmr = make_cmr_observations(subject, n_slices=9)
        ct = make_ct_observations(subject)
        assert len(ct.points_for_phase(0)) >= len(cmr.points_for_phase(0))

    def test_noise_is_applied_and_seeded(self, subject):
        clean = make_cmr_observations(subject, n_slices=9)
        noisy1 = make_cmr_observations(subject, n_slices=9, noise=0.5, seed=3)
        noisy2 = make_cmr_observations(subject, n_slices=9, noise=0.5, seed=3)
        assert not np.array_equal(clean.points_for_phase(0), noisy1.points_for_phase(0))
        assert np.array_equal(noisy1.points_for_phase(0), noisy2.points_for_phase(0))

    def test_save_load_round_trip(self, subject, tmp_path):
        obs = make_cmr_observations(subject, n_slices=9)
        obs.save(tmp_path / "obs")
        loaded = SliceObservation.load(tmp_path / "obs")
        assert loaded.t_n == obs.t_n
        assert loaded.phases == obs.phases
        assert np.abs(loaded.points_for_phase(3) - obs.points_for_phase(3)).max() < 1e-12

    def test_requires_ed_phase_for_registration(self, subject):
        obs = make_cmr_observations(subject, n_slices=9)
        no_ed = SliceObservation([r for r in obs.records if r.phase != 0], obs.t_n)
        from cineflow.errors import RegistrationError

        with pytest.raises(RegistrationError):
            no_ed.ed_points()
