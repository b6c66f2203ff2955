"""Sparse per-slice contour observations: the inference-time input."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, RegistrationError
from .geom import PointCloud


@dataclass
class SliceRecord:
    phase: int
    slice_id: int
    origin: np.ndarray  # plane origin
    normal: np.ndarray  # unit plane normal
    points: np.ndarray  # (P, 3) contour points on the plane


class SliceObservation:
    """Labeled contour point clouds for one subject's (possibly partial) cycle.

    Contour points sample the myocardium surface, so their reference SDF is
    zero. Phases are kept sorted; tau for phase i is i / t_n.
    """

    def __init__(self, records: list[SliceRecord], t_n: int):
        if not records:
            raise DatasetError("observation contains no slices")
        self.records = sorted(records, key=lambda r: (r.phase, r.slice_id))
        self.t_n = int(t_n)
        for r in self.records:
            if not (0 <= r.phase < self.t_n):
                raise DatasetError(f"phase {r.phase} outside [0, {self.t_n})")
        self.phases = sorted({r.phase for r in self.records})

    def require_ed_phase(self):
        if 0 not in self.phases:
            raise RegistrationError(
                "no ED-phase (phase 0) slices; cannot compute the canonical alignment"
            )

    def tau(self, phase: int) -> float:
        return phase / self.t_n

    def points_for_phase(self, phase: int) -> np.ndarray:
        pts = [r.points for r in self.records if r.phase == phase]
        if not pts:
            return np.zeros((0, 3))
        return np.vstack(pts)

    def ed_points(self) -> np.ndarray:
        self.require_ed_phase()
        return self.points_for_phase(0)

    def transformed(self, transform) -> "SliceObservation":
        recs = [
            SliceRecord(r.phase, r.slice_id, r.origin, r.normal, transform.apply_points(r.points))
            for r in self.records
        ]
        return SliceObservation(recs, self.t_n)

    def as_point_cloud(self) -> PointCloud:
        pts = np.vstack([r.points for r in self.records])
        phase = np.concatenate([np.full(len(r.points), r.phase, dtype=np.int64) for r in self.records])
        sid = np.concatenate([np.full(len(r.points), r.slice_id, dtype=np.int64) for r in self.records])
        return PointCloud(pts, phase=phase, slice_id=sid)

    # -- persistence (text points + JSON manifest of planes) ----------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        from .geom.io import write_points_txt

        write_points_txt(directory / "points.txt", self.as_point_cloud())
        planes = {}
        for r in self.records:
            planes.setdefault(str(r.slice_id), {
                "origin": r.origin.tolist(),
                "normal": r.normal.tolist(),
            })
        manifest = {"t_n": self.t_n, "planes": planes}
        (directory / "observation.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "SliceObservation":
        directory = Path(directory)
        from .geom.io import read_points_txt

        cloud = read_points_txt(directory / "points.txt")
        if cloud.phase is None or cloud.slice_id is None:
            raise DatasetError("observation points need phase and slice_id columns")
        manifest = json.loads((directory / "observation.json").read_text())
        planes = manifest["planes"]
        records = []
        for phase in np.unique(cloud.phase):
            mask_p = cloud.phase == phase
            for sid in np.unique(cloud.slice_id[mask_p]):
                mask = mask_p & (cloud.slice_id == sid)
                info = planes[str(int(sid))]
                records.append(
                    SliceRecord(
                        int(phase),
                        int(sid),
                        np.asarray(info["origin"], dtype=np.float64),
                        np.asarray(info["normal"], dtype=np.float64),
                        cloud.points[mask],
                    )
                )
        return cls(records, t_n=int(manifest["t_n"]))
