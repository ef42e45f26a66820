import numpy as np
import pytest

from mcmot.association import Box3D
from mcmot.motion import (
    FilterError,
    KalmanConfig,
    KalmanTrack,
    STATE_DIM,
    init_track,
    predict,
    update,
)


def make_box(center=(0.0, 0.0, 0.0), size=(1.0, 2.0, 1.5), yaw=0.0):
    return Box3D(center=np.asarray(center, float), size=np.asarray(size, float), yaw=yaw)


def noise_free_config():
    return KalmanConfig(
        initial_position_var=1e-12,
        initial_velocity_var=1e4,
        process_position_var=0.0,
        process_velocity_var=0.0,
        observation_var=1e-12,
    )


class TestPredict:
    def test_zero_velocity_keeps_position(self):
        track = init_track(make_box(center=(1.0, 2.0, 3.0)))
        out = predict(track, dt=0.5)
        np.testing.assert_array_equal(out.position, [1.0, 2.0, 3.0])

    def test_linear_advance(self):
        track = init_track(make_box())
        track.state[7] = 1.0  # vx
        out = predict(track, dt=0.5)
        np.testing.assert_allclose(out.position, [0.5, 0.0, 0.0], atol=1e-15)

    def test_covariance_grows_in_position_block(self):
        rng = np.random.default_rng(0)
        track = init_track(make_box())
        for _ in range(20):
            before = track.covariance[:3, :3].copy()
            track = predict(track, dt=0.5)
            growth = track.covariance[:3, :3] - before
            # eigenvalue oracle: the position block never shrinks
            assert np.linalg.eigvalsh(growth).min() >= -1e-12
            obs = make_box(center=rng.uniform(-1, 1, 3))
            track, _ = update(track, obs)

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ValueError, match="dt"):
            predict(init_track(make_box()), dt=0.0)


class TestUpdate:
    def test_observation_equal_to_prediction_is_noop(self):
        track = init_track(make_box(center=(1.0, 1.0, 1.0), yaw=0.3))
        updated, d = update(track, make_box(center=(1.0, 1.0, 1.0), yaw=0.3))
        np.testing.assert_allclose(updated.state, track.state, atol=1e-12)
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_huge_observation_noise_freezes_state(self):
        config = KalmanConfig(observation_var=1e12)
        track = init_track(make_box(), config)
        updated, _ = update(track, make_box(center=(5.0, -3.0, 2.0)), config)
        assert np.max(np.abs(updated.state - track.state)) < 1e-6

    def test_scalar_gain_matches_closed_form(self):
        # diagonal covariance decouples the dimensions, so the x component
        # follows the 1D filter: gain = p / (p + r)
        p, r = 2.5, 0.7
        config = KalmanConfig(observation_var=r)
        track = init_track(make_box(), config)
        track.covariance[:, :] = 0.0
        np.fill_diagonal(track.covariance, p)
        z = 1.9
        updated, _ = update(track, make_box(center=(z, 0.0, 0.0)), config)
        gain = p / (p + r)
        assert updated.state[0] == pytest.approx(gain * z, abs=1e-12)
        # posterior variance oracle: (1 - k) p (Joseph form with k exact)
        assert updated.covariance[0, 0] == pytest.approx(
            (1 - gain) ** 2 * p + gain**2 * r, abs=1e-12
        )

    def test_mahalanobis_translation_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            track = init_track(make_box(center=rng.uniform(-5, 5, 3)))
            obs_center = rng.uniform(-5, 5, 3)
            _, d0 = update(track, make_box(center=obs_center))
            shift = rng.uniform(-100, 100, 3)
            shifted = KalmanTrack(state=track.state.copy(), covariance=track.covariance.copy())
            shifted.state[:3] += shift
            _, d1 = update(shifted, make_box(center=obs_center + shift))
            assert d0 == pytest.approx(d1, abs=1e-9)

    def test_non_spd_innovation_reported(self):
        config = KalmanConfig(observation_var=0.0)
        track = init_track(make_box(), config)
        track.covariance[:, :] = 0.0
        with pytest.raises(FilterError, match="positive definite"):
            update(track, make_box(), config)

    def test_yaw_innovation_wraps(self):
        track = init_track(make_box(yaw=3.1))
        updated, _ = update(track, make_box(yaw=-3.1), KalmanConfig(observation_var=1e-9))
        # the filter should move yaw across the wrap, not through zero
        assert abs(updated.state[3]) > 3.1


class TestNoiseFreeConstantVelocity:
    def test_one_step_prediction_exact_after_two_updates(self):
        config = noise_free_config()
        velocity = np.array([1.2, -0.7, 0.3])
        dt = 0.5

        def pos(k):
            return np.array([10.0, 5.0, 1.0]) + velocity * (k * dt)

        track = init_track(make_box(center=pos(0)), config)
        for k in (1, 2):
            track = predict(track, dt, config)
            track, _ = update(track, make_box(center=pos(k)), config)
        predicted = predict(track, dt, config)
        np.testing.assert_allclose(predicted.position, pos(3), atol=1e-9)
        np.testing.assert_allclose(track.state[7:], velocity, atol=1e-9)


def test_track_validation():
    with pytest.raises(ValueError, match="symmetric"):
        cov = np.eye(STATE_DIM)
        cov[0, 1] = 1.0
        KalmanTrack(state=np.zeros(STATE_DIM), covariance=cov)
