"""Shared file records: ground-truth rows and emitted track outputs.

Both are JSONL, one record per line.  A ground-truth row exists per
(frame, camera, object) triple with world-space geometry; a track record
is global per (frame, track) with the observing cameras listed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class GroundTruthRow:
    """One object visible in one camera at one frame, world coordinates."""

    frame: int
    camera: str
    center: np.ndarray
    size: np.ndarray
    yaw: float
    label: str
    track_id: int
    velocity: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "camera": self.camera,
            "center": self.center.tolist(),
            "size": self.size.tolist(),
            "yaw": float(self.yaw),
            "class": self.label,
            "track_id": self.track_id,
            "velocity": self.velocity.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthRow":
        return cls(
            frame=int(data["frame"]),
            camera=str(data["camera"]),
            center=data["center"],
            size=data["size"],
            yaw=float(data["yaw"]),
            label=str(data["class"]),
            track_id=int(data["track_id"]),
            velocity=data.get("velocity", [0.0, 0.0, 0.0]),
        )


@dataclass
class TrackRecord:
    """One emitted track state for one frame."""

    frame: int
    track_id: int
    center: np.ndarray
    size: np.ndarray
    yaw: float
    label: str
    score: float
    cameras: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "track_id": self.track_id,
            "center": self.center.tolist(),
            "size": self.size.tolist(),
            "yaw": float(self.yaw),
            "class": self.label,
            "score": float(self.score),
            "cameras": list(self.cameras),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrackRecord":
        return cls(
            frame=int(data["frame"]),
            track_id=int(data["track_id"]),
            center=data["center"],
            size=data["size"],
            yaw=float(data["yaw"]),
            label=str(data["class"]),
            score=float(data["score"]),
            cameras=[str(c) for c in data.get("cameras", [])],
        )


def read_jsonl(path: str | Path, record_cls):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_cls.from_dict(json.loads(line)))
    return out


def write_jsonl(records, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict()) + "\n")
