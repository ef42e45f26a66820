"""Per-frame tracking orchestration over the global graph.

Each frame executes, in order: detection ingest, self-attention
embedding, cross-attention (or Kalman) motion prediction, cross-camera
propagation of predicted locations, edge scoring, suppression of matched
detections, same-camera duplicate merging, ID assignment with
cross-camera unification, pruning, and output emission.

Propagated virtual observations join scoring in the frame they are
created; whatever survives of them is dropped before new tracks are
born, so propagation can confirm and extend tracks but never invent one.
The frame step mutates the graph strictly sequentially.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import association as assoc
from . import numeric as nm
from .association import Box3D
from .geometry import CameraRig, load_rig, project_to_image
from .graph import DETECTION, TRACKLET, Detection, GlobalGraph, build_node_input, edge_key
from .gtn import (
    GtnParams,
    cross_attention_stack,
    decode_track_outputs,
    feature_similarity_matrix,
    load_checkpoint,
    self_attention_stack,
    symmetrize_edges,
)
from .motion import KalmanConfig, KalmanTrack, init_track
from .motion import predict as kalman_predict
from .motion import update as kalman_update
from .numeric import Tensor
from .records import GroundTruthRow, TrackRecord

log = logging.getLogger(__name__)

MOTION_GTN = "gtn"
MOTION_KALMAN = "kalman"


@dataclass(frozen=True)
class TrackerConfig:
    motion: str = MOTION_GTN
    threshold_match: float = 0.5
    threshold_dup: float = 0.7
    threshold_global: float = 0.5
    max_age: int = 3
    min_hits: int = 1
    dt: float = 0.1
    score_decay: float = 0.9  # propagated/coasting confidence decay per frame of age
    # a propagated feature must agree with the track's appearance this much,
    # otherwise the pixel belongs to some other object and is ignored
    propagation_min_cosine: float = 0.5
    enhance: bool = False

    def __post_init__(self):
        if self.motion not in (MOTION_GTN, MOTION_KALMAN):
            raise ValueError(f"unknown motion model {self.motion!r}")
        for name in ("threshold_match", "threshold_dup", "threshold_global"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "motion": self.motion,
            "threshold_match": self.threshold_match,
            "threshold_dup": self.threshold_dup,
            "threshold_global": self.threshold_global,
            "max_age": self.max_age,
            "min_hits": self.min_hits,
            "dt": self.dt,
            "score_decay": self.score_decay,
            "enhance": self.enhance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown tracker config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class MotionSample:
    """One-step motion prediction paired with the detection that confirmed it."""

    frame: int
    track_id: int
    predicted_center: np.ndarray
    matched_center: np.ndarray


@dataclass
class VirtualObservation:
    """A propagated box: where an existing track should appear in an
    adjacent camera, confirmed by the feature provider."""

    parent_node: int
    detection: Detection


@dataclass
class FrameResult:
    frame: int
    records: list[TrackRecord]
    enhanced: list[Detection]
    merges: list[assoc.MergeEvent]
    duplicates: list[assoc.MergeEvent]


class Tracker:
    """Stateful multi-camera tracker over one synchronized detection stream."""

    def __init__(
        self,
        rig: CameraRig,
        params: GtnParams,
        config: TrackerConfig | None = None,
        feature_provider=None,
    ):
        self.rig = rig
        self.params = params
        self.config = config or TrackerConfig()
        self.feature_provider = feature_provider
        self.graph = GlobalGraph(rig.camera_ids, params.config.feature_dim)
        self.kalman: dict[int, KalmanTrack] = {}
        self.kalman_config = KalmanConfig()
        self.motion_samples: list[MotionSample] = []
        self.last_frame: int | None = None

    # ------------------------------------------------------------------
    def step(self, frame: int, detections: list[Detection]) -> FrameResult:
        if self.last_frame is not None and frame <= self.last_frame:
            raise ValueError(f"frame {frame} does not advance past {self.last_frame}")
        self.last_frame = frame
        self.graph.frame = frame
        for nid in self.graph.tracklet_ids():
            self.graph.nodes[nid].age += 1

        for det in detections:
            if det.frame != frame:
                raise ValueError(f"detection frame {det.frame} != step frame {frame}")
        real_ids = self.graph.add_detection_nodes(detections)
        self.graph.refresh_edge_distances()

        self._run_attention()
        predicted = self._predict_motion()
        virtuals = self._propagate(frame)
        scores = assoc.score_graph_edges(self.graph, self.params)

        merges = assoc.suppress_matched_detections(
            self.graph, scores, self.config.threshold_match
        )
        self._after_merges(frame, merges, predicted)
        assoc.drop_virtual_detections(self.graph)
        duplicates = assoc.merge_same_camera_nodes(self.graph, scores,
                                                   self.config.threshold_dup)
        assoc.assign_ids(self.graph, scores, self.config.threshold_global)
        for nid in self.graph.prune(self.config.max_age):
            self.kalman.pop(nid, None)

        records = self._emit_records(frame, merges)
        enhanced = self._enhanced_detections(detections, real_ids, virtuals,
                                             merges, duplicates)
        return FrameResult(frame=frame, records=records, enhanced=enhanced,
                           merges=merges, duplicates=duplicates)

    # ------------------------------------------------------------------
    def _run_attention(self) -> None:
        node_ids = self.graph.node_ids()
        if not node_ids:
            return
        inputs = np.stack([build_node_input(self.graph.nodes[nid]) for nid in node_ids])
        centers = np.stack([self.graph.nodes[nid].location for nid in node_ids])
        diff = centers[:, None, :] - centers[None, :, :]
        distances = np.sqrt((diff**2).sum(axis=2))
        feature_sims = feature_similarity_matrix(
            np.stack([self.graph.nodes[nid].feature for nid in node_ids])
        )
        h, e_dir = self_attention_stack(inputs, distances, feature_sims, self.params)
        e_sym = symmetrize_edges(e_dir, len(node_ids)).value
        for row, nid in enumerate(node_ids):
            self.graph.nodes[nid].embedding = h.value[row].copy()
        index = {nid: row for row, nid in enumerate(node_ids)}
        for key, edge in self.graph.edges.items():
            edge.edge_embedding = e_sym[index[key[0]] * len(node_ids) + index[key[1]]].copy()

    def _predict_motion(self) -> dict[int, np.ndarray]:
        """Predict each tracklet's current-frame box; updates node state and
        returns the predicted centers keyed by node id."""
        tracklet_ids = self.graph.tracklet_ids()
        if not tracklet_ids:
            return {}
        predicted: dict[int, np.ndarray] = {}
        if self.config.motion == MOTION_GTN:
            node_ids = self.graph.node_ids()
            index = {nid: row for row, nid in enumerate(node_ids)}
            h = Tensor(np.stack([self.graph.nodes[nid].embedding for nid in node_ids]))
            xt = nm.gather_rows(h, [index[nid] for nid in tracklet_ids])
            det_ids = self.graph.detection_ids()
            xo = nm.gather_rows(h, [index[nid] for nid in det_ids]) if det_ids else None
            z = cross_attention_stack(xt, xo, self.params)
            pred = decode_track_outputs(
                z,
                np.stack([self.graph.nodes[nid].location for nid in tracklet_ids]),
                np.stack([self.graph.nodes[nid].size for nid in tracklet_ids]),
                np.array([self.graph.nodes[nid].yaw for nid in tracklet_ids]),
                self.params,
            )
            for row, nid in enumerate(tracklet_ids):
                node = self.graph.nodes[nid]
                node.location = pred.location.value[row].copy()
                node.size = pred.size.value[row].copy()
                node.yaw = assoc.wrap_angle(float(pred.yaw.value[row, 0]))
                node.class_logits = pred.class_logits.value[row].copy()
                predicted[nid] = node.location.copy()
        else:
            for nid in tracklet_ids:
                node = self.graph.nodes[nid]
                track = self.kalman.get(nid)
                if track is None:
                    track = init_track(Box3D(node.location, node.size, node.yaw),
                                       self.kalman_config)
                track = kalman_predict(track, self.config.dt, self.kalman_config)
                self.kalman[nid] = track
                node.location = track.state[:3].copy()
                node.yaw = float(track.state[3])
                node.size = track.state[4:7].copy()
                predicted[nid] = node.location.copy()
        return predicted

    def _propagate(self, frame: int) -> list[VirtualObservation]:
        """Project predicted tracklet locations into adjacent cameras and add
        virtual observations wherever the feature provider confirms one."""
        if self.feature_provider is None:
            return []
        virtuals = []
        for nid in self.graph.tracklet_ids():
            node = self.graph.nodes[nid]
            for camera_id in self.rig.adjacent_to(node.camera):
                projected = project_to_image(self.rig.camera(camera_id), node.location)
                if projected is None:
                    continue
                try:
                    feature = self.feature_provider.get_feature(
                        camera_id, projected[0], projected[1], frame
                    )
                except Exception:  # provider failure skips this camera only
                    log.warning("feature provider failed for %s at frame %d",
                                camera_id, frame, exc_info=True)
                    continue
                if feature is None:
                    continue
                feature = np.asarray(feature, float)
                cosine = float(
                    (feature @ node.feature)
                    / max(np.linalg.norm(feature) * np.linalg.norm(node.feature), 1e-12)
                )
                if cosine < self.config.propagation_min_cosine:
                    continue  # someone else's appearance at that pixel
                virtual = Detection(
                    frame=frame, camera=camera_id, center=node.location.copy(),
                    size=node.size.copy(), yaw=node.yaw,
                    score=node.score * self.config.score_decay**node.age,
                    label=node.label, feature=feature,
                )
                (vid,) = self.graph.add_detection_nodes([virtual], propagated_from=[nid])
                # the virtual observation is the tracklet seen elsewhere: it
                # inherits the embedding; its fresh edges carry the first-layer
                # distance embedding (attention happens next frame)
                self.graph.nodes[vid].embedding = node.embedding.copy()
                w_edge = self.params["edge_embed.w"].value
                v_feature = self.graph.nodes[vid].feature
                v_unit = v_feature / max(np.linalg.norm(v_feature), 1e-12)
                for key in [k for k in self.graph.edges if vid in k]:
                    edge = self.graph.edges[key]
                    if edge.edge_embedding is None:
                        other = self.graph.nodes[key[0] if key[1] == vid else key[1]]
                        o_unit = other.feature / max(np.linalg.norm(other.feature), 1e-12)
                        pair = np.array([edge.geometry_distance, float(v_unit @ o_unit)])
                        edge.edge_embedding = w_edge @ pair
                virtuals.append(VirtualObservation(parent_node=nid, detection=virtual))
        return virtuals

    def _after_merges(
        self,
        frame: int,
        merges: list[assoc.MergeEvent],
        predicted: dict[int, np.ndarray],
    ) -> None:
        for event in merges:
            node = self.graph.nodes[event.survivor]
            if not event.virtual and event.survivor in predicted:
                self.motion_samples.append(
                    MotionSample(frame=frame, track_id=node.track_id,
                                 predicted_center=predicted[event.survivor],
                                 matched_center=node.location.copy())
                )
            if self.config.motion == MOTION_KALMAN and not event.virtual:
                track = self.kalman.get(event.survivor)
                if track is not None:
                    updated, _ = kalman_update(
                        track, Box3D(node.location, node.size, node.yaw),
                        self.kalman_config,
                    )
                    self.kalman[event.survivor] = updated

    def _emit_records(self, frame: int, merges: list[assoc.MergeEvent]) -> list[TrackRecord]:
        merged_cameras: dict[int, set[str]] = {}
        for event in merges:
            merged_cameras.setdefault(event.survivor, set()).add(event.camera)
        groups: dict[int, list[int]] = {}
        for nid in self.graph.tracklet_ids():
            node = self.graph.nodes[nid]
            if node.hits >= self.config.min_hits:
                groups.setdefault(node.track_id, []).append(nid)
        records = []
        for track_id in sorted(groups):
            members = groups[track_id]
            rep = min(members, key=lambda nid: (self.graph.nodes[nid].age,
                                                -self.graph.nodes[nid].score, nid))
            node = self.graph.nodes[rep]
            cameras: set[str] = set()
            for nid in members:
                cameras |= merged_cameras.get(nid, set())
            if not cameras:
                cameras = {node.camera}
            records.append(
                TrackRecord(
                    frame=frame, track_id=track_id, center=node.location.copy(),
                    size=node.size.copy(), yaw=node.yaw, label=node.label,
                    score=node.score * self.config.score_decay**node.age,
                    cameras=sorted(cameras),
                )
            )
        return records

    def _enhanced_detections(
        self,
        detections: list[Detection],
        real_ids: list[int],
        virtuals: list[VirtualObservation],
        merges: list[assoc.MergeEvent],
        duplicates: list[assoc.MergeEvent],
    ) -> list[Detection]:
        """Raw detections minus merged same-camera duplicates, plus propagated
        boxes for (track, camera) pairs that produced no real detection."""
        if not self.config.enhance:
            return []
        absorbed_by_nm = {e.absorbed for e in duplicates}
        enhanced = [det for det, nid in zip(detections, real_ids)
                    if nid not in absorbed_by_nm]

        def track_of(node_id: int) -> int | None:
            node = self.graph.nodes.get(node_id)
            return None if node is None else node.track_id

        covered: dict[int, set[str]] = {}
        for event in merges:
            if not event.virtual:
                tid = track_of(event.survivor)
                if tid is not None:
                    covered.setdefault(tid, set()).add(event.camera)
        emitted: set[tuple[int, str]] = set()
        for obs in virtuals:
            tid = track_of(obs.parent_node)
            camera = obs.detection.camera
            if tid is None or camera in covered.get(tid, set()):
                continue
            if (tid, camera) in emitted:
                continue
            emitted.add((tid, camera))
            enhanced.append(obs.detection)
        return enhanced


# ---------------------------------------------------------------------------
# file-level runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    records: list[TrackRecord]
    enhanced: list[Detection]
    motion_samples: list[MotionSample]
    runtime_seconds: float


def run_tracking(
    detections: list[Detection],
    rig: CameraRig,
    params: GtnParams,
    config: TrackerConfig | None = None,
    feature_provider=None,
) -> RunResult:
    """Step a tracker over every frame between the first and last detection."""
    config = config or TrackerConfig()
    tracker = Tracker(rig, params, config, feature_provider)
    start = time.perf_counter()
    records: list[TrackRecord] = []
    enhanced: list[Detection] = []
    by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        by_frame.setdefault(det.frame, []).append(det)
    if by_frame:
        for frame in range(min(by_frame), max(by_frame) + 1):
            result = tracker.step(frame, by_frame.get(frame, []))
            records.extend(result.records)
            enhanced.extend(result.enhanced)
    return RunResult(records=records, enhanced=enhanced,
                     motion_samples=tracker.motion_samples,
                     runtime_seconds=time.perf_counter() - start)


def motion_prediction_errors(
    samples: list[MotionSample], gt_rows: list[GroundTruthRow], radius: float = 2.0
) -> list[float]:
    """One-step center errors of motion predictions against ground truth.

    Each sample's matched detection is associated to the nearest ground-truth
    object of its frame; the error is predicted-vs-true center distance.
    """
    gt_by_frame: dict[int, dict[int, GroundTruthRow]] = {}
    for row in gt_rows:
        gt_by_frame.setdefault(row.frame, {}).setdefault(row.track_id, row)
    errors = []
    for sample in samples:
        best, best_dist = None, radius
        for _, row in sorted(gt_by_frame.get(sample.frame, {}).items()):
            dist = float(np.linalg.norm(row.center - sample.matched_center))
            if dist < best_dist:
                best, best_dist = row, dist
        if best is not None:
            errors.append(float(np.linalg.norm(sample.predicted_center - best.center)))
    return errors


def compare_motion_models(
    detections: list[Detection],
    gt_rows: list[GroundTruthRow],
    rig: CameraRig,
    params: GtnParams,
    config: TrackerConfig | None = None,
    feature_provider=None,
) -> dict[str, dict[str, float]]:
    """Run the tracker once per motion model and report mean one-step error."""
    config = config or TrackerConfig()
    table = {}
    for motion in (MOTION_GTN, MOTION_KALMAN):
        run = run_tracking(detections, rig, params, replace(config, motion=motion),
                           feature_provider)
        errors = motion_prediction_errors(run.motion_samples, gt_rows)
        table[motion] = {
            "mean_one_step_error_m": float(np.mean(errors)) if errors else float("nan"),
            "samples": float(len(errors)),
        }
    return table


def write_motion_table(table: dict[str, dict[str, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model,mean_one_step_error_m,samples\n")
        for model in sorted(table):
            row = table[model]
            fh.write(f"{model},{row['mean_one_step_error_m']!r},{int(row['samples'])}\n")
