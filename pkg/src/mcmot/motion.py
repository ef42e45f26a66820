"""Constant-velocity 3D Kalman filter, the classical motion baseline.

State is the 10-vector (x, y, z, yaw, w, l, h, vx, vy, vz); the first
seven components are observed.  Independent tracks may be filtered
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import Box3D, wrap_angle

STATE_DIM = 10
OBS_DIM = 7


class FilterError(RuntimeError):
    """Numerical failure, e.g. a non-positive-definite innovation."""


@dataclass
class KalmanConfig:
    """Diagonal noise levels, following common 3D tracking practice."""

    initial_position_var: float = 1.0
    initial_velocity_var: float = 100.0
    process_position_var: float = 1.0
    process_velocity_var: float = 0.01
    observation_var: float = 1.0

    def observation_noise(self) -> np.ndarray:
        return np.eye(OBS_DIM) * self.observation_var

    def process_noise(self) -> np.ndarray:
        q = np.zeros((STATE_DIM, STATE_DIM))
        q[:OBS_DIM, :OBS_DIM] = np.eye(OBS_DIM) * self.process_position_var
        q[OBS_DIM:, OBS_DIM:] = np.eye(3) * self.process_velocity_var
        return q


@dataclass
class KalmanTrack:
    """Gaussian state of one tracked object."""

    state: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64).reshape(STATE_DIM)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if self.covariance.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"covariance must be {STATE_DIM}x{STATE_DIM}")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(self.covariance) < -1e-9):
            raise ValueError("covariance must be positive semi-definite")

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def box(self) -> Box3D:
        return Box3D(center=self.state[:3].copy(), size=self.state[4:7].copy(),
                     yaw=self.state[3])


def init_track(box: Box3D, config: KalmanConfig | None = None) -> KalmanTrack:
    """Start a track at an observed box with zero velocity and a wide
    velocity prior."""
    config = config or KalmanConfig()
    state = np.zeros(STATE_DIM)
    state[:3] = box.center
    state[3] = box.yaw
    state[4:7] = box.size
    cov = np.eye(STATE_DIM) * config.initial_position_var
    cov[OBS_DIM:, OBS_DIM:] = np.eye(3) * config.initial_velocity_var
    return KalmanTrack(state=state, covariance=cov)


def _transition(dt: float) -> np.ndarray:
    f = np.eye(STATE_DIM)
    f[0, 7] = f[1, 8] = f[2, 9] = dt
    return f


def predict(track: KalmanTrack, dt: float, config: KalmanConfig | None = None) -> KalmanTrack:
    """Constant-velocity transition with process noise added."""
    if dt <= 0:
        raise ValueError(f"predict needs dt > 0, got {dt}")
    config = config or KalmanConfig()
    f = _transition(dt)
    state = f @ track.state
    state[3] = wrap_angle(state[3])
    cov = f @ track.covariance @ f.T + config.process_noise()
    return KalmanTrack(state=state, covariance=cov)


def update(
    track: KalmanTrack, observation: Box3D, config: KalmanConfig | None = None
) -> tuple[KalmanTrack, float]:
    """Standard Kalman update on the observed components.

    Returns the updated track and the Mahalanobis distance of the
    innovation, usable for gating.
    """
    config = config or KalmanConfig()
    h = np.zeros((OBS_DIM, STATE_DIM))
    h[:OBS_DIM, :OBS_DIM] = np.eye(OBS_DIM)
    z = np.concatenate([observation.center, [observation.yaw], observation.size])
    innovation = z - h @ track.state
    innovation[3] = wrap_angle(innovation[3])
    s = h @ track.covariance @ h.T + config.observation_noise()
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is not positive definite") from exc
    solved = np.linalg.solve(chol, innovation)
    mahalanobis = float(np.sqrt(solved @ solved))
    gain = track.covariance @ h.T @ np.linalg.solve(s, np.eye(OBS_DIM))
    state = track.state + gain @ innovation
    state[3] = wrap_angle(state[3])
    identity = np.eye(STATE_DIM)
    cov = (identity - gain @ h) @ track.covariance @ (identity - gain @ h).T
    cov = cov + gain @ config.observation_noise() @ gain.T
    cov = (cov + cov.T) / 2.0
    return KalmanTrack(state=state, covariance=cov), mahalanobis
