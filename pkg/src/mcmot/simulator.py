"""Synthetic multi-camera scenes with ground truth, at desk scale.

Objects move on the ground plane around a ring rig, either in straight
lines or on circular arcs.  Every camera that sees an object contributes
one ground-truth row per frame and, unless dropped, one noisy detection
carrying the object's identity feature.  Identity features are fixed
random unit vectors, standing in for the appearance descriptors a
re-identification backbone would produce.

Generation is single-threaded and fully determined by the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import CameraRig, project_to_image, rig_from_dict, rig_to_dict, ring_rig
from .graph import Detection
from .records import GroundTruthRow

CONSTANT_VELOCITY = "constant_velocity"
TURNING = "turning"


@dataclass(frozen=True)
class ScenarioConfig:
    n_objects: int = 10
    n_frames: int = 100
    dt: float = 0.1
    motion: str = CONSTANT_VELOCITY
    center_noise: float = 0.0
    yaw_noise: float = 0.0
    size_noise: float = 0.0
    dropout: float = 0.0
    dropout_scope: str = "all"  # or "overlap": only multi-camera views drop
    duplicate_rate: float = 0.0
    feature_dim: int = 16
    feature_noise: float = 0.0
    seed: int = 0
    spawn_radius_min: float = 8.0
    spawn_radius_max: float = 15.0
    speed_min: float = 0.5
    speed_max: float = 1.5
    label: str = "car"
    rig: dict | None = None  # serialized rig; None selects the default ring
    # force object 0 onto a fast circular arc so it crosses camera views
    handoff_object: bool = False

    def __post_init__(self):
        for name in ("dropout", "duplicate_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("center_noise", "yaw_noise", "size_noise", "feature_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.motion not in (CONSTANT_VELOCITY, TURNING):
            raise ValueError(f"unknown motion model {self.motion!r}")
        if self.dropout_scope not in ("all", "overlap"):
            raise ValueError(f"unknown dropout scope {self.dropout_scope!r}")

    def build_rig(self) -> CameraRig:
        return rig_from_dict(self.rig) if self.rig is not None else ring_rig()

    def to_dict(self) -> dict:
        data = {
            "n_objects": self.n_objects,
            "n_frames": self.n_frames,
            "dt": self.dt,
            "motion": self.motion,
            "center_noise": self.center_noise,
            "yaw_noise": self.yaw_noise,
            "size_noise": self.size_noise,
            "dropout": self.dropout,
            "dropout_scope": self.dropout_scope,
            "duplicate_rate": self.duplicate_rate,
            "feature_dim": self.feature_dim,
            "feature_noise": self.feature_noise,
            "seed": self.seed,
            "spawn_radius_min": self.spawn_radius_min,
            "spawn_radius_max": self.spawn_radius_max,
            "speed_min": self.speed_min,
            "speed_max": self.speed_max,
            "label": self.label,
            "rig": self.rig,
        }
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ObjectState:
    """Kinematic description of one simulated object."""

    track_id: int
    kind: str
    size: np.ndarray
    base_feature: np.ndarray
    # constant velocity
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # turning (circular arc around the rig origin)
    orbit_radius: float = 0.0
    angular_rate: float = 0.0
    phase: float = 0.0
    height: float = 0.0

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray, float]:
        """(center, velocity, yaw) at time t."""
        if self.kind == CONSTANT_VELOCITY:
            center = self.origin + self.velocity * t
            yaw = float(np.arctan2(self.velocity[1], self.velocity[0]))
            return center, self.velocity.copy(), yaw
        angle = self.phase + self.angular_rate * t
        center = np.array([
            self.orbit_radius * np.cos(angle), self.orbit_radius * np.sin(angle), self.height,
        ])
        speed = self.orbit_radius * self.angular_rate
        heading = angle + np.pi / 2 * np.sign(self.angular_rate)
        velocity = np.array([
            -self.orbit_radius * self.angular_rate * np.sin(angle),
            self.orbit_radius * self.angular_rate * np.cos(angle),
            0.0,
        ])
        return center, velocity, float(heading)


def _sample_objects(config: ScenarioConfig, rng: np.random.Generator) -> list[ObjectState]:
    objects = []
    base_size = np.array([1.9, 4.6, 1.7])
    duration = config.n_frames * config.dt
    for track_id in range(config.n_objects):
        size = base_size * rng.uniform(0.9, 1.1, size=3) if config.size_noise >= 0 else base_size
        feature = rng.normal(size=config.feature_dim)
        feature /= np.linalg.norm(feature)
        height = size[2] / 2.0
        if config.handoff_object and track_id == 0:
            radius = 0.5 * (config.spawn_radius_min + config.spawn_radius_max)
            speed = max(config.speed_max, 1.2)
            objects.append(
                ObjectState(
                    track_id=track_id, kind=TURNING, size=size, base_feature=feature,
                    orbit_radius=radius, angular_rate=speed / radius,
                    phase=rng.uniform(0, 2 * np.pi), height=height,
                )
            )
            continue
        if config.motion == TURNING:
            radius = rng.uniform(config.spawn_radius_min, config.spawn_radius_max)
            speed = rng.uniform(config.speed_min, config.speed_max)
            direction = 1.0 if rng.uniform() < 0.5 else -1.0
            objects.append(
                ObjectState(
                    track_id=track_id, kind=TURNING, size=size, base_feature=feature,
                    orbit_radius=radius, angular_rate=direction * speed / radius,
                    phase=rng.uniform(0, 2 * np.pi), height=height,
                )
            )
            continue
        # straight motion: resample until the path stays outside the rig's
        # near-field blind zone for the whole run
        for _ in range(200):
            radius = rng.uniform(config.spawn_radius_min, config.spawn_radius_max)
            angle = rng.uniform(0, 2 * np.pi)
            origin = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
            speed = rng.uniform(config.speed_min, config.speed_max)
            heading = rng.uniform(0, 2 * np.pi)
            velocity = np.array([speed * np.cos(heading), speed * np.sin(heading), 0.0])
            times = np.linspace(0.0, duration, config.n_frames)
            path = origin[None, :2] + velocity[None, :2] * times[:, None]
            if np.min(np.linalg.norm(path, axis=1)) > 5.0:
                break
        objects.append(
            ObjectState(track_id=track_id, kind=CONSTANT_VELOCITY, size=size,
                        base_feature=feature, origin=origin, velocity=velocity)
        )
    return objects


@dataclass
class Scene:
    config: ScenarioConfig
    rig: CameraRig
    ground_truth: list[GroundTruthRow]
    detections: list[Detection]
    identity_features: dict[int, np.ndarray]


def generate(config: ScenarioConfig) -> Scene:
    """Simulate the scene: ground truth per visible (frame, camera, object)
    and noisy detections with dropout and duplication applied."""
    rng = np.random.default_rng(config.seed)
    rig = config.build_rig()
    objects = _sample_objects(config, rng)

    ground_truth: list[GroundTruthRow] = []
    detections: list[Detection] = []
    any_visible = False
    for frame in range(config.n_frames):
        t = frame * config.dt
        for obj in objects:
            center, velocity, yaw = obj.pose(t)
            visible_in = [
                cam.camera_id for cam in rig.cameras
                if project_to_image(cam, center) is not None
            ]
            if visible_in:
                any_visible = True
            for camera_id in visible_in:
                ground_truth.append(
                    GroundTruthRow(frame=frame, camera=camera_id, center=center.copy(),
                                   size=obj.size.copy(), yaw=yaw, label=config.label,
                                   track_id=obj.track_id, velocity=velocity)
                )
                droppable = config.dropout_scope == "all" or len(visible_in) >= 2
                if droppable and config.dropout > 0 and rng.uniform() < config.dropout:
                    continue

                def noisy_detection(extra_jitter: float, score: float) -> Detection:
                    noisy_center = center + rng.normal(0, config.center_noise or 0, 3) \
                        + rng.normal(0, extra_jitter, 3)
                    noisy_size = np.maximum(
                        obj.size + rng.normal(0, config.size_noise or 0, 3), 0.2
                    )
                    noisy_yaw = yaw + rng.normal(0, config.yaw_noise or 0)
                    feature = obj.base_feature + rng.normal(
                        0, config.feature_noise or 0, config.feature_dim
                    )
                    return Detection(frame=frame, camera=camera_id, center=noisy_center,
                                     size=noisy_size, yaw=noisy_yaw, score=score,
                                     label=config.label, feature=feature)

                detections.append(noisy_detection(0.0, score=1.0))
                if config.duplicate_rate > 0 and rng.uniform() < config.duplicate_rate:
                    detections.append(noisy_detection(0.1, score=0.8))
    if not any_visible:
        import warnings

        warnings.warn("no object was ever visible; emitting empty files")
    return Scene(config=config, rig=rig, ground_truth=ground_truth,
                 detections=detections, identity_features={
                     obj.track_id: obj.base_feature for obj in objects
                 })


def inject_handoff(config: ScenarioConfig) -> ScenarioConfig:
    """Guarantee a camera-to-camera handoff: object 0 becomes a tangential
    orbiter fast enough to cross at least one adjacent-camera boundary."""
    rig = config.build_rig()
    if not rig.adjacency:
        raise ValueError("handoff injection needs a rig with adjacent cameras")
    return replace(config, handoff_object=True)


def handoff_trace(
    ground_truth: list[GroundTruthRow], rig: CameraRig, track_id: int
) -> dict | None:
    """Find an adjacent-camera transition of one track: at least 5 frames in
    each camera with at least 2 frames of shared visibility."""
    frames: dict[int, set[str]] = {}
    for row in ground_truth:
        if row.track_id == track_id:
            frames.setdefault(row.frame, set()).add(row.camera)
    if not frames:
        return None
    counts: dict[str, int] = {}
    for cams in frames.values():
        for cam in cams:
            counts[cam] = counts.get(cam, 0) + 1
    for pair in rig.adjacency:
        cam_a, cam_b = sorted(pair)
        if counts.get(cam_a, 0) >= 5 and counts.get(cam_b, 0) >= 5:
            overlap = sum(1 for cams in frames.values() if cam_a in cams and cam_b in cams)
            if overlap >= 2:
                return {"camera_a": cam_a, "camera_b": cam_b,
                        "frames_a": counts[cam_a], "frames_b": counts[cam_b],
                        "overlap_frames": overlap}
    return None


def find_handoff_track(ground_truth: list[GroundTruthRow], rig: CameraRig) -> tuple[int, dict] | None:
    for track_id in sorted({r.track_id for r in ground_truth}):
        trace = handoff_trace(ground_truth, rig, track_id)
        if trace is not None:
            return track_id, trace
    return None


class SimulatedFeatureProvider:
    """Pixel-query seam standing in for a re-identification backbone.

    Given a camera, pixel and frame, answers with the noisy identity
    feature of the true object whose projection falls within the pixel
    radius (nearest wins), or None when nothing is there.  A real system
    would crop the image and run a feature extractor at this exact seam.
    """

    def __init__(
        self,
        rig: CameraRig,
        ground_truth: list[GroundTruthRow],
        identity_features: dict[int, np.ndarray],
        feature_noise: float = 0.0,
        pixel_radius: float = 20.0,
        seed: int = 0,
    ):
        self.rig = rig
        self.identity_features = {int(k): np.asarray(v, float)
                                  for k, v in identity_features.items()}
        self.feature_noise = feature_noise
        self.pixel_radius = pixel_radius
        self._rng = np.random.default_rng(seed)
        self._by_frame_camera: dict[tuple[int, str], list[GroundTruthRow]] = {}
        for row in ground_truth:
            self._by_frame_camera.setdefault((row.frame, row.camera), []).append(row)

    def get_feature(self, camera_id: str, u: float, v: float, frame: int) -> np.ndarray | None:
        camera = self.rig.camera(camera_id)
        best_track, best_dist = None, self.pixel_radius
        for row in self._by_frame_camera.get((frame, camera_id), []):
            projected = project_to_image(camera, row.center)
            if projected is None:
                continue
            dist = float(np.hypot(projected[0] - u, projected[1] - v))
            if dist <= best_dist:
                best_track, best_dist = row.track_id, dist
        if best_track is None:
            return None
        feature = self.identity_features[best_track]
        if self.feature_noise > 0:
            feature = feature + self._rng.normal(0, self.feature_noise, feature.shape)
        return feature


def write_scene(scene: Scene, out_dir: str | Path) -> dict[str, Path]:
    """Write detections, ground truth, rig, identity features and the
    resolved scenario config; returns the paths."""
    from .geometry import save_rig
    from .graph import write_detections
    from .records import write_jsonl

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "detections": out / "detections.jsonl",
        "ground_truth": out / "ground_truth.jsonl",
        "rig": out / "rig.json",
        "features": out / "features.json",
        "scenario": out / "scenario.json",
    }
    write_detections(scene.detections, paths["detections"])
    write_jsonl(scene.ground_truth, paths["ground_truth"])
    save_rig(scene.rig, paths["rig"])
    with open(paths["features"], "w", encoding="utf-8") as fh:
        json.dump({str(k): v.tolist() for k, v in sorted(scene.identity_features.items())},
                  fh, sort_keys=True)
        fh.write("\n")
    with open(paths["scenario"], "w", encoding="utf-8") as fh:
        json.dump(scene.config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_feature_provider(
    rig_path: str | Path,
    gt_path: str | Path,
    features_path: str | Path,
    feature_noise: float = 0.0,
    pixel_radius: float = 20.0,
    seed: int = 0,
) -> SimulatedFeatureProvider:
    from .geometry import load_rig
    from .records import read_jsonl

    with open(features_path, encoding="utf-8") as fh:
        features = {int(k): np.asarray(v, float) for k, v in json.load(fh).items()}
    return SimulatedFeatureProvider(
        rig=load_rig(rig_path),
        ground_truth=read_jsonl(gt_path, GroundTruthRow),
        identity_features=features,
        feature_noise=feature_noise,
        pixel_radius=pixel_radius,
        seed=seed,
    )
