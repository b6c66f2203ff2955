"""Geometry file I/O: OBJ meshes, PLY / plain-text point clouds."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from ..errors import CineflowError
from .mesh import PointCloud, TriMesh


def _atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_obj(path, mesh: TriMesh):
    lines = [f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts = []
    faces = []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise CineflowError(f"no vertices in OBJ file {path}")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))


def write_ply(path, cloud: PointCloud):
    n = len(cloud)
    props = ["property double x", "property double y", "property double z"]
    if cloud.phase is not None:
        props.append("property int phase")
    if cloud.slice_id is not None:
        props.append("property int slice_id")
    header = ["ply", "format ascii 1.0", f"element vertex {n}"] + props + ["end_header"]
    body = []
    for i, p in enumerate(cloud.points):
        row = f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}"
        if cloud.phase is not None:
            row += f" {cloud.phase[i]}"
        if cloud.slice_id is not None:
            row += f" {cloud.slice_id[i]}"
        body.append(row)
    _atomic_write_text(path, "\n".join(header + body) + "\n")


def read_ply(path) -> PointCloud:
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise CineflowError(f"{path} is not a PLY file")
        props = []
        n = 0
        while True:
            line = f.readline()
            if not line:
                raise CineflowError(f"unexpected end of PLY header in {path}")
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        rows = [f.readline().split() for _ in range(n)]
    data = np.array(rows, dtype=np.float64)
    cols = {name: data[:, i] for i, name in enumerate(props)}
    return PointCloud(
        np.stack([cols["x"], cols["y"], cols["z"]], axis=1),
        phase=cols.get("phase"),
        slice_id=cols.get("slice_id"),
    )


def write_points_txt(path, cloud: PointCloud):
    """One point per line: x y z [phase] [slice_id]."""
    lines = []
    for i, p in enumerate(cloud.points):
        row = f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}"
        if cloud.phase is not None:
            row += f" {cloud.phase[i]}"
        if cloud.slice_id is not None:
            row += f" {cloud.slice_id[i]}"
        lines.append(row)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_points_txt(path) -> PointCloud:
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] < 3:
        raise CineflowError(f"{path}: need at least x y z per line")
    phase = data[:, 3] if data.shape[1] >= 4 else None
    slice_id = data[:, 4] if data.shape[1] >= 5 else None
    return PointCloud(data[:, :3], phase=phase, slice_id=slice_id)
