import numpy as np
import pytest

from cineflow.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from cineflow.edspace import NormalizationSpec, build_ssm
from cineflow.errors import CheckpointError, ChecksumError, VersionError
from cineflow.inference import MotionPca
from cineflow.models import CodeTable, MotionNet, ShapeNet
from cineflow.synthdata import make_atlas


@pytest.fixture(scope="module")
def full_checkpoint():
    rng = np.random.default_rng(0)
    ssm = build_ssm(make_atlas(4, seed=1), k_alpha=3)
    spec = NormalizationSpec.from_mean_shape(ssm)
    shape_net = ShapeNet.create(rng, code_dim=8, hidden=16, n_layers=3, skip_at=2)
    motion_net = MotionNet.create(rng, code_dim=6, hidden=12, n_layers=3)
    table = CodeTable(shape_dim=8, motion_dim=6)
    for s in ("a", "b"):
        table.add_shape_code(s, rng.normal(size=8))
        for p in range(4):
            table.add_motion_code(s, p, rng.normal(size=6))
    pca = MotionPca(rng.normal(size=24), np.linalg.qr(rng.normal(size=(24, 2)))[0],
                    np.array([3.0, 1.0]), t_n=4, code_dim=6)
    return Checkpoint(
        ssm=ssm,
        normalization=spec,
        shape_net=shape_net,
        motion_net=motion_net,
        code_table=table,
        motion_pca=pca,
        config={"seed": 7, "note": "test"},
    )


class TestRoundTrip:
    def test_bit_exact_tensors(self, full_checkpoint, tmp_path):
        path = tmp_path / "ckpt.cflw"
        save_checkpoint(path, full_checkpoint)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.ssm.mean_shape, full_checkpoint.ssm.mean_shape)
        assert np.array_equal(loaded.ssm.basis, full_checkpoint.ssm.basis)
        assert np.array_equal(loaded.ssm.faces, full_checkpoint.ssm.faces)
        for l1, l2 in zip(loaded.shape_net.net.layers, full_checkpoint.shape_net.net.layers):
            assert np.array_equal(l1.weight, l2.weight)
            assert np.array_equal(l1.bias, l2.bias)
            assert l1.activation == l2.activation
        assert loaded.shape_net.net.skips == full_checkpoint.shape_net.net.skips
        assert np.array_equal(
            loaded.code_table.motion_code("b", 2), full_checkpoint.code_table.motion_code("b", 2)
        )
        assert np.array_equal(loaded.motion_pca.basis, full_checkpoint.motion_pca.basis)
        assert loaded.normalization.scale == full_checkpoint.normalization.scale
        assert loaded.config == full_checkpoint.config
        assert loaded.missing == set()

    def test_saved_twice_is_byte_identical(self, full_checkpoint, tmp_path):
        p1, p2 = tmp_path / "a.cflw", tmp_path / "b.cflw"
        save_checkpoint(p1, full_checkpoint)
        save_checkpoint(p2, full_checkpoint)
        assert p1.read_bytes() == p2.read_bytes()

    def test_forward_pass_survives_round_trip(self, full_checkpoint, tmp_path):
        path = tmp_path / "ckpt.cflw"
        save_checkpoint(path, full_checkpoint)
        loaded = load_checkpoint(path)
        rng = np.random.default_rng(1)
        code = rng.normal(size=8)
        pts = rng.normal(size=(5, 3))
        assert np.array_equal(
            loaded.shape_net.forward(code, pts), full_checkpoint.shape_net.forward(code, pts)
        )


class TestCorruption:
    def test_truncated_file_fails_checksum(self, full_checkpoint, tmp_path):
        path = tmp_path / "ckpt.cflw"
        save_checkpoint(path, full_checkpoint)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 100])
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_flipped_byte_fails_checksum(self, full_checkpoint, tmp_path):
        path = tmp_path / "ckpt.cflw"
        save_checkpoint(path, full_checkpoint)
        blob = bytearray(path.read_bytes())
        blob[100] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_unknown_version_refused_with_numbers(self, full_checkpoint, tmp_path):
        import hashlib
        import struct

        path = tmp_path / "ckpt.cflw"
        save_checkpoint(path, full_checkpoint)
        blob = bytearray(path.read_bytes())[:-32]
        struct.pack_into("<I", blob, 4, 99)
        blob = bytes(blob)
        path.write_bytes(blob + hashlib.sha256(blob).digest())
        with pytest.raises(VersionError, match="99"):
            load_checkpoint(path)

    def test_not_a_container(self, tmp_path):
        path = tmp_path / "junk.cflw"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestPartial:
    def test_partial_container_flags_missing(self, full_checkpoint, tmp_path):
        partial = Checkpoint(ssm=full_checkpoint.ssm, normalization=full_checkpoint.normalization)
        path = tmp_path / "partial.cflw"
        save_checkpoint(path, partial)
        loaded = load_checkpoint(path)
        assert loaded.ssm is not None
        assert loaded.shape_net is None
        assert "shape_net" in loaded.missing
        assert "motion_pca" in loaded.missing
        assert "ssm" not in loaded.missing
