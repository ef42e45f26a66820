"""Camera models, rig description and the cross-camera transform chain.

Extrinsics are stored camera-to-world; world-to-camera is always derived
as the rigid inverse (R^T, -R^T t) rather than by general inversion.
Adjacency between cameras is declared in the rig file, not inferred.
All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ORTHONORMAL_TOL = 1e-9


class RigError(ValueError):
    """Invalid rig description or unknown camera id."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole matrix (pixels) plus image bounds."""

    k: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64)
        object.__setattr__(self, "k", k)
        if k.shape != (3, 3):
            raise RigError(f"intrinsics must be 3x3, got {k.shape}")
        if abs(k[2, 2] - 1.0) > 1e-12:
            raise RigError("intrinsics k[2][2] must be 1")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise RigError("focal entries must be positive")
        cx, cy = k[0, 2], k[1, 2]
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise RigError("principal point outside image bounds")


@dataclass(frozen=True)
class CameraExtrinsics:
    """4x4 rigid camera-to-world transform."""

    cam_to_world: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.cam_to_world, dtype=np.float64)
        object.__setattr__(self, "cam_to_world", m)
        if m.shape != (4, 4):
            raise RigError(f"extrinsics must be 4x4, got {m.shape}")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise RigError("rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise RigError("rotation block must have determinant +1")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise RigError("last extrinsics row must be [0,0,0,1]")

    @property
    def world_to_cam(self) -> np.ndarray:
        """Rigid inverse (R^T, -R^T t)."""
        r = self.cam_to_world[:3, :3]
        t = self.cam_to_world[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return inv


@dataclass(frozen=True)
class Camera:
    camera_id: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass
class CameraRig:
    """Ordered cameras plus the declared overlap adjacency."""

    cameras: list[Camera]
    adjacency: set[frozenset[str]] = field(default_factory=set)

    def __post_init__(self):
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise RigError("camera ids must be unique")
        for pair in self.adjacency:
            for cid in pair:
                if cid not in ids:
                    raise RigError(f"adjacency references unknown camera {cid!r}")

    @property
    def camera_ids(self) -> list[str]:
        return [c.camera_id for c in self.cameras]

    def camera(self, camera_id: str) -> Camera:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise RigError(f"unknown camera id {camera_id!r}")

    def camera_index(self, camera_id: str) -> int:
        for i, cam in enumerate(self.cameras):
            if cam.camera_id == camera_id:
                return i
        raise RigError(f"unknown camera id {camera_id!r}")

    def adjacent_to(self, camera_id: str) -> list[str]:
        self.camera(camera_id)
        out = []
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                continue
            if frozenset((camera_id, cam.camera_id)) in self.adjacency:
                out.append(cam.camera_id)
        return out


def compose_cross_camera_transform(rig: CameraRig, from_camera: str, to_camera: str) -> np.ndarray:
    """3x4 matrix mapping homogeneous camera-`from` points to pixels of camera-`to`.

    Composition: intrinsics(to) . world_to_cam(to) . cam_to_world(from).
    """
    src = rig.camera(from_camera)
    dst = rig.camera(to_camera)
    k34 = np.hstack([dst.intrinsics.k, np.zeros((3, 1))])
    return k34 @ dst.extrinsics.world_to_cam @ src.extrinsics.cam_to_world


def project_to_image(camera: Camera, world_point: np.ndarray) -> tuple[float, float, float] | None:
    """Pinhole projection to (u, v, depth); None when behind or out of bounds."""
    p = np.asarray(world_point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("world point must be finite")
    cam_pt = camera.extrinsics.world_to_cam @ np.append(p, 1.0)
    depth = cam_pt[2]
    if depth <= 0.0:
        return None
    pix = camera.intrinsics.k @ cam_pt[:3]
    u = pix[0] / pix[2]
    v = pix[1] / pix[2]
    if not (0.0 <= u < camera.intrinsics.width and 0.0 <= v < camera.intrinsics.height):
        return None
    return (u, v, depth)


def backproject(camera: Camera, u: float, v: float, depth: float) -> np.ndarray:
    """World point whose projection is (u, v) at the given positive depth."""
    if depth <= 0.0:
        raise ValueError(f"backproject needs depth > 0, got {depth}")
    ray = np.linalg.solve(camera.intrinsics.k, np.array([u, v, 1.0]))
    cam_pt = ray * (depth / ray[2])
    world = camera.extrinsics.cam_to_world @ np.append(cam_pt, 1.0)
    return world[:3]


def euclidean_distance_3d(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("distance needs finite inputs")
    return float(np.linalg.norm(a - b))


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "cameras": [
            {
                "id": cam.camera_id,
                "width": cam.intrinsics.width,
                "height": cam.intrinsics.height,
                "intrinsics": cam.intrinsics.k.tolist(),
                "extrinsics_cam_to_world": cam.extrinsics.cam_to_world.tolist(),
            }
            for cam in rig.cameras
        ],
        "adjacency": sorted(sorted(pair) for pair in rig.adjacency),
    }


def rig_from_dict(data: dict) -> CameraRig:
    try:
        cameras = [
            Camera(
                camera_id=str(entry["id"]),
                intrinsics=CameraIntrinsics(
                    k=np.asarray(entry["intrinsics"], dtype=np.float64),
                    width=int(entry["width"]),
                    height=int(entry["height"]),
                ),
                extrinsics=CameraExtrinsics(
                    cam_to_world=np.asarray(entry["extrinsics_cam_to_world"], dtype=np.float64)
                ),
            )
            for entry in data["cameras"]
        ]
        adjacency = {frozenset((str(a), str(b))) for a, b in data.get("adjacency", [])}
    except (KeyError, TypeError) as exc:
        raise RigError(f"malformed rig description: {exc}") from exc
    return CameraRig(cameras=cameras, adjacency=adjacency)


def load_rig(path: str | Path) -> CameraRig:
    with open(path, encoding="utf-8") as fh:
        return rig_from_dict(json.load(fh))


def save_rig(rig: CameraRig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rig_to_dict(rig), fh, indent=2, sort_keys=True)
        fh.write("\n")


def ring_rig(
    num_cameras: int = 6,
    fov_deg: float = 85.0,
    width: int = 1600,
    height: int = 900,
    radius: float = 1.0,
    mount_height: float = 1.5,
) -> CameraRig:
    """Outward-looking ring of cameras with overlapping neighbours.

    With the default 85 deg field of view and 60 deg spacing, adjacent
    cameras share roughly 25 deg of view.  Camera frames use the usual
    convention: +z optical axis, +x right, +y down.
    """
    fx = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    k = np.array([[fx, 0.0, width / 2.0], [0.0, fx, height / 2.0], [0.0, 0.0, 1.0]])
    cameras = []
    for i in range(num_cameras):
        theta = 2.0 * np.pi * i / num_cameras
        forward = np.array([np.cos(theta), np.sin(theta), 0.0])
        right = np.array([np.sin(theta), -np.cos(theta), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        m = np.eye(4)
        m[:3, 0] = right
        m[:3, 1] = down
        m[:3, 2] = forward
        m[:3, 3] = np.array([radius * np.cos(theta), radius * np.sin(theta), mount_height])
        cameras.append(
            Camera(
                camera_id=f"cam{i}",
                intrinsics=CameraIntrinsics(k=k, width=width, height=height),
                extrinsics=CameraExtrinsics(cam_to_world=m),
            )
        )
    adjacency = {
        frozenset((f"cam{i}", f"cam{(i + 1) % num_cameras}")) for i in range(num_cameras)
    }
    return CameraRig(cameras=cameras, adjacency=adjacency)
