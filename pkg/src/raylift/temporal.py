"""Constant-velocity 3D Kalman filtering of per-frame translation estimates.

State is position + velocity in millimeters; the defaults convert the
meter-scale tuning constants (freq 30Hz, q_pos 0.001, q_vel 1e-5,
r_meas 0.001) to mm^2 / (mm/s)^2 by the 1e6 variance scaling. Filtering is
sequential per track; distinct tracks may run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import EmptyTrajectoryError, LengthMismatchError


@dataclass(frozen=True)
class KalmanConfig:
    freq: float = 30.0  # Hz
    q_pos: float = 1000.0  # process noise, mm^2
    q_vel: float = 10.0  # process noise, (mm/s)^2
    r_meas: float = 1000.0  # measurement noise, mm^2

    def __post_init__(self):
        if self.freq <= 0:
            raise ValueError("freq must be positive")
        if min(self.q_pos, self.q_vel, self.r_meas) <= 0:
            raise ValueError("noise variances must be positive")


@dataclass
class KalmanState:
    x: np.ndarray  # (6,) position mm, velocity mm/s
    P: np.ndarray  # (6, 6) covariance


def init_state(measurement: np.ndarray, cfg: KalmanConfig) -> KalmanState:
    """Start at the first measurement with zero velocity and a wide velocity prior."""
    x = np.zeros(6)
    x[:3] = np.asarray(measurement, dtype=float)
    P = np.zeros((6, 6))
    P[:3, :3] = cfg.r_meas * np.eye(3)
    P[3:, 3:] = 1e3 * cfg.q_vel * np.eye(3)
    return KalmanState(x=x, P=P)


def _transition(cfg: KalmanConfig) -> np.ndarray:
    f = np.eye(6)
    f[:3, 3:] = np.eye(3) / cfg.freq
    return f


def _process_noise(cfg: KalmanConfig) -> np.ndarray:
    q = np.zeros((6, 6))
    q[:3, :3] = cfg.q_pos * np.eye(3)
    q[3:, 3:] = cfg.q_vel * np.eye(3)
    return q


def kf_predict(state: KalmanState, cfg: KalmanConfig) -> KalmanState:
    """Propagate one frame without a measurement (dropped detection)."""
    f = _transition(cfg)
    x = f @ state.x
    p = f @ state.P @ f.T + _process_noise(cfg)
    return KalmanState(x=x, P=0.5 * (p + p.T))


def kf_step(state: KalmanState, z: np.ndarray, cfg: KalmanConfig) -> tuple[KalmanState, np.ndarray]:
    """One predict-update cycle; returns the new state and the filtered position."""
    pred = kf_predict(state, cfg)
    z = np.asarray(z, dtype=float)
    innov = z - pred.x[:3]
    s = pred.P[:3, :3] + cfg.r_meas * np.eye(3)
    gain = np.linalg.solve(s.T, pred.P[:, :3].T).T  # P H^T S^-1
    x = pred.x + gain @ innov
    p = (np.eye(6) - gain @ np.hstack([np.eye(3), np.zeros((3, 3))])) @ pred.P
    p = 0.5 * (p + p.T)
    new = KalmanState(x=x, P=p)
    return new, x[:3].copy()


def filter_trajectory(traj, cfg: KalmanConfig = KalmanConfig()) -> np.ndarray:
    """Filter a translation sequence causally; None entries are predict-only frames.

    Output has the same length as the input. The state initializes at the
    first available measurement with zero velocity.
    """
    frames = list(traj)
    if not frames:
        raise EmptyTrajectoryError("trajectory is empty")

    out = np.zeros((len(frames), 3))
    state = None
    for i, z in enumerate(frames):
        if state is None:
            if z is None:
                raise EmptyTrajectoryError("trajectory must start with a measurement")
            state = init_state(z, cfg)
            out[i] = state.x[:3]
            continue
        if z is None:
            state = kf_predict(state, cfg)
            out[i] = state.x[:3]
        else:
            state, out[i] = kf_step(state, z, cfg)
    return out


def tune_objective(filtered, gt, fidelity_weight: float) -> float:
    """Fidelity/smoothness trade-off: lam * sum |p - gt|^2 + (1-lam) * sum |second diff|^2."""
    f = np.asarray(filtered, dtype=float)
    g = np.asarray(gt, dtype=float)
    if f.shape != g.shape:
        raise LengthMismatchError(f"trajectory shapes differ: {f.shape} vs {g.shape}")
    if len(f) < 3:
        raise LengthMismatchError("need at least 3 frames")
    fid = float(np.sum((f - g) ** 2))
    accel = f[2:] - 2.0 * f[1:-1] + f[:-2]
    smooth = float(np.sum(accel**2))
    return fidelity_weight * fid + (1.0 - fidelity_weight) * smooth


@dataclass(frozen=True)
class TuneConfig:
    fidelity_weight: float = 0.7
    q_pos_grid: tuple = (100.0, 1000.0, 10000.0)
    q_vel_grid: tuple = (1.0, 10.0, 100.0)
    r_meas_grid: tuple = (100.0, 1000.0, 10000.0)

    def __post_init__(self):
        if not 0.0 <= self.fidelity_weight <= 1.0:
            raise ValueError("fidelity_weight must lie in [0, 1]")
        if not (self.q_pos_grid and self.q_vel_grid and self.r_meas_grid):
            raise ValueError("grids must be non-empty")


def grid_tune(noisy, gt, tc: TuneConfig = TuneConfig(), freq: float = 30.0) -> KalmanConfig:
    """Exhaustive grid search over noise parameters minimizing tune_objective.

    Ties break toward the lexicographically smallest (q_pos, q_vel, r_meas).
    """
    best_key = None
    best_cfg = None
    for q_pos, q_vel, r_meas in product(
        sorted(tc.q_pos_grid), sorted(tc.q_vel_grid), sorted(tc.r_meas_grid)
    ):
        cfg = KalmanConfig(freq=freq, q_pos=q_pos, q_vel=q_vel, r_meas=r_meas)
        score = tune_objective(filter_trajectory(noisy, cfg), gt, tc.fidelity_weight)
        key = (score, q_pos, q_vel, r_meas)
        if best_key is None or key < best_key:
            best_key = key
            best_cfg = cfg
    return best_cfg
