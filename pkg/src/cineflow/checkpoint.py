"""Single-file binary checkpoint container (CFLW format).

Layout: magic ``CFLW``, format version (u32 LE), section count (u32 LE),
then length-prefixed named sections, then a SHA-256 over all preceding
bytes. Sections are either UTF-8 JSON or an array bundle of named float64 /
int64 tensors (little-endian). Partial containers (e.g. after pre-training
only) load fine; absent sections are reported in ``missing``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import DenseLayer, DenseNet
from .edspace import NormalizationSpec, Ssm
from .errors import CheckpointError, ChecksumError, VersionError
from .inference import MotionPca
from .models import CodeTable, MotionNet, ShapeNet

MAGIC = b"CFLW"
VERSION = 1
_KIND_JSON = 0
_KIND_ARRAYS = 1
_DTYPES = {0: np.float64, 1: np.int64}
_DTYPE_TAGS = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


def _pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            arr = arr.astype(np.float64)
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BI", _DTYPE_TAGS[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(out)


def _unpack_arrays(payload: bytes) -> dict[str, np.ndarray]:
    view = memoryview(payload)
    pos = 0
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos : pos + nlen]).decode("utf-8")
        pos += nlen
        tag, ndim = struct.unpack_from("<BI", view, pos)
        pos += 5
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        dtype = np.dtype(_DTYPES[tag]).newbyteorder("<")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(view[pos : pos + nbytes], dtype=dtype).reshape(shape)
        pos += nbytes
        arrays[name] = arr.astype(_DTYPES[tag])
    return arrays


def _write_container(path, sections: list[tuple[str, int, bytes]]):
    body = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, kind, payload in sections:
        nb = name.encode("utf-8")
        body.append(struct.pack("<I", len(nb)))
        body.append(nb)
        body.append(struct.pack("<BQ", kind, len(payload)))
        body.append(payload)
    blob = b"".join(body)
    blob += hashlib.sha256(blob).digest()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_container(path) -> dict[str, tuple[int, bytes]]:
    blob = Path(path).read_bytes()
    if len(blob) < 44 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a CFLW container")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: content checksum mismatch (truncated or corrupted)")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, this build reads {VERSION}")
    pos = 12
    sections = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        name = payload[pos : pos + nlen].decode("utf-8")
        pos += nlen
        kind, plen = struct.unpack_from("<BQ", payload, pos)
        pos += 9
        sections[name] = (kind, payload[pos : pos + plen])
        pos += plen
    return sections


# -- component (de)serialization ------------------------------------------------


def _net_sections(prefix: str, net: DenseNet):
    arrays = {}
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.weight
        arrays[f"b{i}"] = layer.bias
    meta = {
        "activations": [l.activation for l in net.layers],
        "skips": [list(s) for s in net.skips],
    }
    return meta, arrays


def _net_from_sections(meta: dict, arrays: dict) -> DenseNet:
    layers = []
    for i, act in enumerate(meta["activations"]):
        layers.append(DenseLayer(arrays[f"w{i}"].copy(), arrays[f"b{i}"].copy(), act))
    return DenseNet(layers, skips=tuple(tuple(s) for s in meta["skips"]))


@dataclass
class Checkpoint:
    ssm: Ssm | None = None
    normalization: NormalizationSpec | None = None
    shape_net: ShapeNet | None = None
    motion_net: MotionNet | None = None
    code_table: CodeTable | None = None
    motion_pca: MotionPca | None = None
    config: dict | None = None
    missing: set[str] = field(default_factory=set)


_ALL_SECTIONS = ("ssm", "normalization", "shape_net", "motion_net", "code_table", "motion_pca", "config")


def save_checkpoint(path, ckpt: Checkpoint):
    sections: list[tuple[str, int, bytes]] = []

    def add_json(name, obj):
        sections.append((name, _KIND_JSON, json.dumps(obj, sort_keys=True).encode("utf-8")))

    def add_arrays(name, arrays):
        sections.append((name, _KIND_ARRAYS, _pack_arrays(arrays)))

    if ckpt.config is not None:
        add_json("config", ckpt.config)
    if ckpt.ssm is not None:
        s = ckpt.ssm
        add_json("ssm.meta", {"n_training": s.n_training})
        arrays = {
            "mean": s.mean_shape,
            "basis": s.basis,
            "singular": s.singular_values,
            "faces": s.faces,
        }
        if s.training_alphas is not None:
            arrays["training_alphas"] = s.training_alphas
        add_arrays("ssm.arrays", arrays)
    if ckpt.normalization is not None:
        add_arrays(
            "normalization",
            {"center": ckpt.normalization.center, "scale": np.array([ckpt.normalization.scale])},
        )
    if ckpt.shape_net is not None:
        meta, arrays = _net_sections("shape", ckpt.shape_net.net)
        meta["code_dim"] = ckpt.shape_net.code_dim
        add_json("shape_net.meta", meta)
        add_arrays("shape_net.arrays", arrays)
    if ckpt.motion_net is not None:
        meta, arrays = _net_sections("motion", ckpt.motion_net.net)
        meta["code_dim"] = ckpt.motion_net.code_dim
        add_json("motion_net.meta", meta)
        add_arrays("motion_net.arrays", arrays)
    if ckpt.code_table is not None:
        t = ckpt.code_table
        subjects = t.subjects()
        motion_keys = sorted(t.motion_codes)
        add_json(
            "code_table.meta",
            {
                "shape_dim": t.shape_dim,
                "motion_dim": t.motion_dim,
                "subjects": subjects,
                "motion_keys": [[s, p] for s, p in motion_keys],
            },
        )
        arrays = {}
        if subjects:
            arrays["shape_codes"] = np.stack([t.shape_codes[s] for s in subjects])
        if motion_keys:
            arrays["motion_codes"] = np.stack([t.motion_codes[k] for k in motion_keys])
        add_arrays("code_table.arrays", arrays)
    if ckpt.motion_pca is not None:
        p = ckpt.motion_pca
        add_json("motion_pca.meta", {"t_n": p.t_n, "code_dim": p.code_dim})
        add_arrays(
            "motion_pca.arrays",
            {"mean": p.mean, "basis": p.basis, "singular": p.singular_values},
        )
    _write_container(path, sections)


def load_checkpoint(path) -> Checkpoint:
    sections = _read_container(path)

    def get_json(name):
        kind, payload = sections[name]
        if kind != _KIND_JSON:
            raise CheckpointError(f"section {name} is not JSON")
        return json.loads(payload.decode("utf-8"))

    def get_arrays(name):
        kind, payload = sections[name]
        if kind != _KIND_ARRAYS:
            raise CheckpointError(f"section {name} is not an array bundle")
        return _unpack_arrays(payload)

    ckpt = Checkpoint()
    if "config" in sections:
        ckpt.config = get_json("config")
    if "ssm.arrays" in sections:
        meta = get_json("ssm.meta")
        arrays = get_arrays("ssm.arrays")
        ckpt.ssm = Ssm(
            arrays["mean"],
            arrays["basis"],
            arrays["singular"],
            arrays["faces"],
            meta["n_training"],
            training_alphas=arrays.get("training_alphas"),
        )
    if "normalization" in sections:
        arrays = get_arrays("normalization")
        ckpt.normalization = NormalizationSpec(arrays["center"], float(arrays["scale"][0]))
    if "shape_net.arrays" in sections:
        meta = get_json("shape_net.meta")
        ckpt.shape_net = ShapeNet(
            _net_from_sections(meta, get_arrays("shape_net.arrays")), meta["code_dim"]
        )
    if "motion_net.arrays" in sections:
        meta = get_json("motion_net.meta")
        ckpt.motion_net = MotionNet(
            _net_from_sections(meta, get_arrays("motion_net.arrays")), meta["code_dim"]
        )
    if "code_table.arrays" in sections:
        meta = get_json("code_table.meta")
        arrays = get_arrays("code_table.arrays")
        table = CodeTable(meta["shape_dim"], meta["motion_dim"])
        for i, s in enumerate(meta["subjects"]):
            table.add_shape_code(s, arrays["shape_codes"][i])
        for i, (s, p) in enumerate(meta["motion_keys"]):
            table.add_motion_code(s, int(p), arrays["motion_codes"][i])
        ckpt.code_table = table
    if "motion_pca.arrays" in sections:
        meta = get_json("motion_pca.meta")
        arrays = get_arrays("motion_pca.arrays")
        ckpt.motion_pca = MotionPca(
            arrays["mean"], arrays["basis"], arrays["singular"], meta["t_n"], meta["code_dim"]
        )
    present = {name.split(".")[0] for name in sections}
    ckpt.missing = {s for s in _ALL_SECTIONS if s not in present}
    return ckpt
