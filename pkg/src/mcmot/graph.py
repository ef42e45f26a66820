"""The single global graph of tracklets and incoming detections.

Nodes are either fresh per-camera detections or tracked objects; edges
form a complete graph over live nodes and carry the 3D distance between
endpoints plus, once the attention stack has run, a learned embedding and
a link-probability score.  All mutation happens on one thread per frame
step; snapshots may be shared read-only afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import euclidean_distance_3d

DETECTION = "detection"
TRACKLET = "tracklet"

ACTIVE = "active"
REMOVED = "removed"


class SchemaError(ValueError):
    """Malformed detection record or inconsistent graph input."""


@dataclass
class Detection:
    """One per-camera 3D observation with an appearance feature vector."""

    frame: int
    camera: str
    center: np.ndarray
    size: np.ndarray
    yaw: float
    score: float
    label: str
    feature: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.center.shape != (3,):
            raise SchemaError(f"detection center must be length 3, got {self.center.shape}")
        if self.size.shape != (3,) or np.any(self.size <= 0):
            raise SchemaError("detection size components must be positive")
        if not 0.0 <= self.score <= 1.0:
            raise SchemaError(f"detection score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "camera": self.camera,
            "center": self.center.tolist(),
            "size": self.size.tolist(),
            "yaw": float(self.yaw),
            "score": float(self.score),
            "class": self.label,
            "feature": self.feature.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Detection":
        try:
            return cls(
                frame=int(data["frame"]),
                camera=str(data["camera"]),
                center=data["center"],
                size=data["size"],
                yaw=float(data["yaw"]),
                score=float(data["score"]),
                label=str(data["class"]),
                feature=data["feature"],
            )
        except KeyError as exc:
            raise SchemaError(f"detection record missing field {exc}") from exc


@dataclass
class TrackletNode:
    """A tracked object's state inside the global graph."""

    node_id: int
    kind: str
    camera: str
    camera_encoding: np.ndarray
    location: np.ndarray
    feature: np.ndarray
    size: np.ndarray
    yaw: float
    score: float
    label: str
    track_id: int | None = None
    embedding: np.ndarray | None = None
    class_logits: np.ndarray | None = None
    age: int = 0
    hits: int = 0
    state: str = ACTIVE
    # set on virtual observations created by cross-camera propagation
    propagated_from: int | None = None

    @property
    def is_virtual(self) -> bool:
        return self.propagated_from is not None


@dataclass
class GraphEdge:
    """Undirected edge; endpoints stored as (min id, max id)."""

    a: int
    b: int
    geometry_distance: float
    edge_embedding: np.ndarray | None = None
    similarity: float | None = None

    def __post_init__(self):
        if self.a == self.b:
            raise SchemaError("edge endpoints must be distinct")
        if self.geometry_distance < 0:
            raise SchemaError("geometry distance must be >= 0")


def edge_key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


class GlobalGraph:
    """Cross-camera graph of tracklet/detection nodes and weighted edges."""

    def __init__(self, camera_ids: list[str], feature_dim: int):
        self.camera_ids = list(camera_ids)
        self.feature_dim = feature_dim
        self.frame = -1
        self.nodes: dict[int, TrackletNode] = {}
        self.edges: dict[tuple[int, int], GraphEdge] = {}
        self.next_track_id = 0
        self._next_node_id = 0

    def camera_encoding(self, camera: str) -> np.ndarray:
        if camera not in self.camera_ids:
            raise SchemaError(f"unknown camera {camera!r}")
        enc = np.zeros(len(self.camera_ids))
        enc[self.camera_ids.index(camera)] = 1.0
        return enc

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def allocate_track_id(self) -> int:
        tid = self.next_track_id
        self.next_track_id += 1
        return tid

    def _new_node(self, detection: Detection, propagated_from: int | None = None) -> TrackletNode:
        if detection.feature.shape != (self.feature_dim,):
            raise SchemaError(
                f"feature length {detection.feature.shape[0]} != configured {self.feature_dim}"
            )
        node = TrackletNode(
            node_id=self._next_node_id,
            kind=DETECTION,
            camera=detection.camera,
            camera_encoding=self.camera_encoding(detection.camera),
            location=detection.center.copy(),
            feature=detection.feature.copy(),
            size=detection.size.copy(),
            yaw=float(detection.yaw),
            score=float(detection.score),
            label=detection.label,
            propagated_from=propagated_from,
        )
        self._next_node_id += 1
        return node

    def add_detection_nodes(
        self, detections: list[Detection], propagated_from: list[int | None] | None = None
    ) -> list[int]:
        """Insert one node per detection and connect it to every live node."""
        sources = propagated_from or [None] * len(detections)
        added = []
        for det, src in zip(detections, sources):
            if det.frame != self.frame:
                raise SchemaError(f"detection frame {det.frame} != graph frame {self.frame}")
            node = self._new_node(det, propagated_from=src)
            for other_id in self.node_ids():
                other = self.nodes[other_id]
                key = edge_key(node.node_id, other_id)
                self.edges[key] = GraphEdge(
                    a=key[0],
                    b=key[1],
                    geometry_distance=euclidean_distance_3d(node.location, other.location),
                )
            self.nodes[node.node_id] = node
            added.append(node.node_id)
        return added

    def refresh_edge_distances(self) -> None:
        """Recompute every edge's distance from current node locations."""
        for edge in self.edges.values():
            edge.geometry_distance = euclidean_distance_3d(
                self.nodes[edge.a].location, self.nodes[edge.b].location
            )

    def remove_node(self, node_id: int) -> None:
        node = self.nodes.pop(node_id)
        node.state = REMOVED
        for key in [k for k in self.edges if node_id in k]:
            del self.edges[key]

    def prune(self, max_age: int) -> list[int]:
        """Drop tracklets not matched for more than `max_age` frames."""
        if max_age < 1:
            raise ValueError(f"max_age must be >= 1, got {max_age}")
        removed = [
            nid
            for nid in self.node_ids()
            if self.nodes[nid].kind == TRACKLET and self.nodes[nid].age > max_age
        ]
        for nid in removed:
            self.remove_node(nid)
        return removed

    def edge(self, i: int, j: int) -> GraphEdge:
        return self.edges[edge_key(i, j)]

    def tracklet_ids(self) -> list[int]:
        return [nid for nid in self.node_ids() if self.nodes[nid].kind == TRACKLET]

    def detection_ids(self) -> list[int]:
        return [nid for nid in self.node_ids() if self.nodes[nid].kind == DETECTION]


def build_node_input(node: TrackletNode) -> np.ndarray:
    """Concatenate [feature | camera one-hot | location], in that order."""
    return np.concatenate([node.feature, node.camera_encoding, node.location])


def split_node_input(
    vec: np.ndarray, feature_dim: int, num_cameras: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of build_node_input; slices the three segments back out."""
    return (
        vec[:feature_dim],
        vec[feature_dim : feature_dim + num_cameras],
        vec[feature_dim + num_cameras :],
    )


def read_detections(path: str | Path) -> list[Detection]:
    """Read a JSONL detection file; frames must be non-decreasing."""
    detections = []
    last_frame = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            det = Detection.from_dict(json.loads(line))
            if last_frame is not None and det.frame < last_frame:
                raise SchemaError(
                    f"{path}:{line_no}: frame {det.frame} decreases below {last_frame}"
                )
            last_frame = det.frame
            detections.append(det)
    return detections


def write_detections(detections: list[Detection], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for det in detections:
            fh.write(json.dumps(det.to_dict()) + "\n")
