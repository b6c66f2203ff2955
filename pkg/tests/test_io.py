import numpy as np
import pytest

from cineflow.errors import CineflowError
from cineflow.geom import PointCloud, icosphere
from cineflow.geom.io import (
    read_obj,
    read_ply,
    read_points_txt,
    write_obj,
    write_ply,
    write_points_txt,
)


@pytest.fixture()
def labeled_cloud():
    rng = np.random.default_rng(0)
    return PointCloud(
        rng.normal(size=(40, 3)),
        phase=rng.integers(0, 5, 40),
        slice_id=rng.integers(0, 9, 40),
    )


class TestObj:
    def test_round_trip(self, tmp_path):
        mesh = icosphere(2)
        write_obj(tmp_path / "m.obj", mesh)
        back = read_obj(tmp_path / "m.obj")
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)

    def test_quad_faces_are_fan_triangulated(self, tmp_path):
        (tmp_path / "q.obj").write_text(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        )
        mesh = read_obj(tmp_path / "q.obj")
        assert len(mesh.faces) == 2

    def test_empty_rejected(self, tmp_path):
        (tmp_path / "e.obj").write_text("# nothing\n")
        with pytest.raises(CineflowError):
            read_obj(tmp_path / "e.obj")


class TestPly:
    def test_round_trip_with_labels(self, tmp_path, labeled_cloud):
        write_ply(tmp_path / "c.ply", labeled_cloud)
        back = read_ply(tmp_path / "c.ply")
        assert np.array_equal(back.points, labeled_cloud.points)
        assert np.array_equal(back.phase, labeled_cloud.phase)
        assert np.array_equal(back.slice_id, labeled_cloud.slice_id)

    def test_plain_points(self, tmp_path):
        cloud = PointCloud(np.random.default_rng(1).normal(size=(7, 3)))
        write_ply(tmp_path / "p.ply", cloud)
        back = read_ply(tmp_path / "p.ply")
        assert np.array_equal(back.points, cloud.points)
        assert back.phase is None

    def test_rejects_non_ply(self, tmp_path):
        (tmp_path / "x.ply").write_text("not a ply\n1 2 3\n")
        with pytest.raises(CineflowError):
            read_ply(tmp_path / "x.ply")


class TestPointsTxt:
    def test_round_trip_with_labels(self, tmp_path, labeled_cloud):
        write_points_txt(tmp_path / "c.txt", labeled_cloud)
        back = read_points_txt(tmp_path / "c.txt")
        assert np.array_equal(back.points, labeled_cloud.points)
        assert np.array_equal(back.phase, labeled_cloud.phase)
        assert np.array_equal(back.slice_id, labeled_cloud.slice_id)

    def test_bare_xyz(self, tmp_path):
        (tmp_path / "p.txt").write_text("0 0 0\n1 2 3\n")
        back = read_points_txt(tmp_path / "p.txt")
        assert len(back) == 2
        assert back.phase is None
