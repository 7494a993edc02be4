import numpy as np
import pytest

from raylift.errors import EmptyTrajectoryError, LengthMismatchError
from raylift.metrics import JointTrajectory, acc_error
from raylift.temporal import (
    KalmanConfig,
    TuneConfig,
    filter_trajectory,
    grid_tune,
    init_state,
    kf_predict,
    kf_step,
    tune_objective,
)


class TestKfStep:
    def test_converges_to_constant(self):
        cfg = KalmanConfig()
        z = np.array([120.0, -40.0, 410.0])
        state = init_state(z, cfg)
        pos = z
        for _ in range(300):
            state, pos = kf_step(state, z, cfg)
        np.testing.assert_allclose(pos, z, atol=1e-3)

    def test_perfect_measurement_limit(self):
        cfg = KalmanConfig(r_meas=1e-9)
        state = init_state(np.zeros(3), cfg)
        z = np.array([5.0, -3.0, 2.0])
        state, pos = kf_step(state, z, cfg)
        innovation = np.linalg.norm(z)
        assert np.linalg.norm(pos - z) < 0.01 * innovation

    def test_velocity_on_linear_track(self):
        # defaults adapt velocity slowly (r_meas large, q_vel small); the 5%
        # band is reached after roughly 900 steps of burn-in
        cfg = KalmanConfig()
        v_true = np.array([30.0, -15.0, 8.0])  # mm/s
        p0 = np.array([0.0, 100.0, 400.0])
        state = init_state(p0, cfg)
        for k in range(1, 1200):
            z = p0 + v_true * k / cfg.freq
            state, _ = kf_step(state, z, cfg)
        np.testing.assert_allclose(state.x[3:], v_true, rtol=0.05)

    def test_covariance_stays_psd(self):
        cfg = KalmanConfig()
        rng = np.random.default_rng(5)
        state = init_state(rng.normal(size=3), cfg)
        for _ in range(100):
            state, _ = kf_step(state, rng.normal(scale=50.0, size=3), cfg)
            eig = np.linalg.eigvalsh(state.P)
            assert eig.min() >= -1e-9
            np.testing.assert_allclose(state.P, state.P.T)


class TestFilterTrajectory:
    def test_length_one_identity(self):
        z = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(filter_trajectory(z), z)

    def test_constant_identity(self):
        traj = np.tile(np.array([50.0, 60.0, 300.0]), (40, 1))
        out = filter_trajectory(traj)
        np.testing.assert_allclose(out, traj, atol=1e-6)

    def test_causality(self):
        rng = np.random.default_rng(8)
        traj = rng.normal(scale=30.0, size=(60, 3)) + np.array([0, 0, 400.0])
        full = filter_trajectory(traj)
        for t in (1, 7, 30, 59):
            np.testing.assert_array_equal(filter_trajectory(traj[: t + 1])[: t + 1], full[: t + 1])

    def test_missing_frames_predict_only(self):
        traj = [np.array([0.0, 0.0, 400.0]), None, None, np.array([3.0, 0.0, 400.0])]
        out = filter_trajectory(traj)
        assert out.shape == (4, 3)
        assert np.all(np.isfinite(out))

    def test_empty_rejected(self):
        with pytest.raises(EmptyTrajectoryError):
            filter_trajectory([])

    def test_smooths_noisy_sinusoid(self):
        # acceleration error vs ground truth must drop by >= 20% after filtering
        fps = 30.0
        t = np.arange(300) / fps
        gt = np.stack(
            [60 * np.sin(0.8 * t), 40 * np.sin(1.3 * t + 0.5), 400 + 50 * np.sin(0.5 * t)], axis=1
        )
        reductions = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            noisy = gt + rng.normal(scale=5.0, size=gt.shape)
            filt = filter_trajectory(noisy, KalmanConfig(freq=fps))
            gt_traj = JointTrajectory(gt[:, None, :], fps=fps)
            a_raw = acc_error(JointTrajectory(noisy[:, None, :], fps=fps), gt_traj)
            a_filt = acc_error(JointTrajectory(filt[:, None, :], fps=fps), gt_traj)
            reductions.append(1.0 - a_filt / a_raw)
        assert min(reductions) >= 0.20

    def test_step_lag_grows_with_r(self):
        step = np.zeros((80, 3))
        step[10:] = np.array([100.0, 0.0, 0.0])

        def lag(cfg):
            out = filter_trajectory(step, cfg)
            return int(np.argmax(out[10:, 0] >= 90.0))

        lags = [lag(KalmanConfig(r_meas=r)) for r in (250.0, 500.0, 1000.0, 2000.0, 4000.0)]
        assert all(b >= a for a, b in zip(lags, lags[1:]))


class TestTuneObjective:
    def test_zero_on_linear_match(self):
        t = np.arange(20)[:, None] * np.array([1.0, 2.0, -0.5])[None, :]
        assert tune_objective(t, t, 0.7) == 0.0

    def test_fidelity_only(self):
        gt = np.zeros((15, 3))
        delta = np.array([3.0, 0.0, 4.0])
        filtered = gt + delta
        assert tune_objective(filtered, gt, 1.0) == pytest.approx(15 * 25.0)

    def test_smoothness_only_quadratic(self):
        a = np.array([0.5, -1.0, 2.0])
        t = np.arange(12, dtype=float)
        traj = a[None, :] * (t**2)[:, None]
        expect = (12 - 2) * float(np.sum((2 * a) ** 2))
        assert tune_objective(traj, np.zeros_like(traj), 0.0) == pytest.approx(expect)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            tune_objective(np.zeros((5, 3)), np.zeros((6, 3)), 0.5)


class TestGridTune:
    def test_returns_grid_argmin(self):
        rng = np.random.default_rng(4)
        t = np.arange(120) / 30.0
        gt = np.stack([50 * np.sin(t), 30 * np.cos(0.7 * t), 400 + 20 * np.sin(0.3 * t)], axis=1)
        noisy = gt + rng.normal(scale=4.0, size=gt.shape)
        tc = TuneConfig(
            fidelity_weight=0.7,
            q_pos_grid=(10.0, 1000.0),
            q_vel_grid=(1.0, 10.0),
            r_meas_grid=(100.0, 5000.0),
        )
        best = grid_tune(noisy, gt, tc)
        best_score = tune_objective(filter_trajectory(noisy, best), gt, 0.7)
        for qp in tc.q_pos_grid:
            for qv in tc.q_vel_grid:
                for r in tc.r_meas_grid:
                    cfg = KalmanConfig(freq=30.0, q_pos=qp, q_vel=qv, r_meas=r)
                    score = tune_objective(filter_trajectory(noisy, cfg), gt, 0.7)
                    assert best_score <= score + 1e-12

    def test_single_point_grid(self):
        gt = np.tile(np.array([0.0, 0.0, 400.0]), (10, 1))
        tc = TuneConfig(q_pos_grid=(123.0,), q_vel_grid=(4.5,), r_meas_grid=(678.0,))
        best = grid_tune(gt, gt, tc)
        assert (best.q_pos, best.q_vel, best.r_meas) == (123.0, 4.5, 678.0)

    def test_identity_preserving_config_wins_at_full_fidelity(self):
        rng = np.random.default_rng(9)
        traj = rng.normal(scale=20.0, size=(50, 3)) + np.array([0, 0, 400.0])
        # gt equals the input, so the config that reproduces the input wins
        tc = TuneConfig(
            fidelity_weight=1.0,
            q_pos_grid=(1e6,),
            q_vel_grid=(1.0,),
            r_meas_grid=(1e-6, 1e6),
        )
        best = grid_tune(traj, traj, tc)
        assert best.r_meas == 1e-6
        lo = tune_objective(filter_trajectory(traj, best), traj, 1.0)
        hi_cfg = KalmanConfig(freq=30.0, q_pos=1e6, q_vel=1.0, r_meas=1e6)
        hi = tune_objective(filter_trajectory(traj, hi_cfg), traj, 1.0)
        assert lo < hi

    def test_predict_covariance_grows(self):
        cfg = KalmanConfig()
        state = init_state(np.zeros(3), cfg)
        grown = kf_predict(state, cfg)
        assert np.trace(grown.P) > np.trace(state.P)
