"""Closed-form confidence-weighted point-to-ray least squares.

Recovers the single camera-space translation shared by a rigid joint set from
root-relative joints and unit bearing rays, eliminating the per-joint depths
analytically. Pure functions; frames are independent and may be solved in
parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CalibratedCamera, unproject_ray
from .errors import (
    AllKeypointsMaskedError,
    DegenerateSystemError,
    TooFewCorrespondencesError,
)


@dataclass(frozen=True)
class Correspondence:
    """One joint's (root-relative position, unit bearing ray, confidence) triple."""

    joint: np.ndarray  # (3,) mm
    ray: np.ndarray  # (3,) unit
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "joint", np.asarray(self.joint, dtype=float))
        object.__setattr__(self, "ray", np.asarray(self.ray, dtype=float))
        if abs(np.linalg.norm(self.ray) - 1.0) > 1e-9:
            raise ValueError("bearing ray must be unit length")
        if self.weight <= 0:
            raise ValueError("confidence weight must be positive")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-8  # absolute Tikhonov term on the normal matrix
    kappa_max: float = 1e6
    damping: float = 0.5
    max_damp_rounds: int = 10

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if self.kappa_max <= 1:
            raise ValueError("kappa_max must exceed 1")


@dataclass(frozen=True)
class FrameEstimate:
    """Solver output for one frame."""

    translation: np.ndarray  # (3,) mm
    depths: np.ndarray  # (N,) mm, per correspondence
    energy: float  # residual energy, mm^2
    damp_rounds: int
    kappa: float  # condition number of the final (undamped-by-epsilon) normal matrix


def projector(ray: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the plane normal to a unit ray: I - d d^T."""
    d = np.asarray(ray, dtype=float)
    return np.eye(3) - np.outer(d, d)


def residual(translation: np.ndarray, corr: Correspondence) -> np.ndarray:
    """Perpendicular offset of the translated joint from its ray."""
    p = np.asarray(translation, dtype=float) + corr.joint
    return p - (corr.ray @ p) * corr.ray


def _normal_system(joints: np.ndarray, rays: np.ndarray, weights: np.ndarray):
    # M = sum w_i (I - d_i d_i^T),  m = sum w_i (J_i - (d_i . J_i) d_i)
    wd = weights[:, None] * rays
    mat = weights.sum() * np.eye(3) - wd.T @ rays
    proj_j = joints - np.sum(rays * joints, axis=1, keepdims=True) * rays
    vec = weights @ proj_j
    return mat, vec


def _sym3_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric 3x3 matrix, ascending, by the trigonometric closed form."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    if p1 == 0.0:
        return np.sort(np.diagonal(a))
    q = np.trace(a) / 3.0
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = min(1.0, max(-1.0, np.linalg.det(b) / 2.0))
    phi = math.acos(r) / 3.0
    hi = q + 2.0 * p * math.cos(phi)
    lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return np.array([lo, 3.0 * q - hi - lo, hi])


def condition_number(mat: np.ndarray) -> float:
    """kappa = lambda_max / lambda_min for a symmetric PSD 3x3; +inf when singular."""
    eig = _sym3_eigenvalues(mat)
    lo = max(eig[0], 0.0)
    if lo < 1e-300:
        return math.inf
    return float(eig[2] / lo)


def solve_translation(corrs: list[Correspondence], cfg: SolverConfig = SolverConfig()) -> FrameEstimate:
    """Solve the weighted point-to-ray system for the shared translation.

    Damps the weights and rebuilds the normal equations while the condition
    number stays above cfg.kappa_max, up to cfg.max_damp_rounds, then solves
    the Tikhonov-stabilized system. Per-correspondence optimal depths come out
    in closed form.
    """
    if len(corrs) < 2:
        raise TooFewCorrespondencesError(f"need at least 2 correspondences, got {len(corrs)}")
    joints = np.stack([c.joint for c in corrs])
    rays = np.stack([c.ray for c in corrs])
    weights = np.array([c.weight for c in corrs], dtype=float)

    damp_rounds = 0
    while True:
        mat, vec = _normal_system(joints, rays, weights)
        kappa = condition_number(mat)
        if kappa < cfg.kappa_max or damp_rounds >= cfg.max_damp_rounds:
            break
        weights = weights * cfg.damping
        damp_rounds += 1

    t = np.linalg.solve(mat + cfg.epsilon * np.eye(3), -vec)
    shifted = t[None, :] + joints
    depths = np.sum(rays * shifted, axis=1)
    resid = shifted - depths[:, None] * rays
    energy = float(weights @ np.sum(resid * resid, axis=1))
    if not math.isfinite(energy) and kappa >= cfg.kappa_max:
        raise DegenerateSystemError(
            f"system still ill-conditioned (kappa={kappa}) after {damp_rounds} damp rounds"
        )
    return FrameEstimate(
        translation=t, depths=depths, energy=energy, damp_rounds=damp_rounds, kappa=kappa
    )


@dataclass(frozen=True)
class LiftResult:
    """A lifted frame: solver estimate plus camera-space joints for every input joint."""

    estimate: FrameEstimate
    camera_joints: np.ndarray  # (N, 3) mm, translation + root-relative joint
    used: np.ndarray  # (N,) bool, joints that entered the solve

    @property
    def behind_camera(self) -> np.ndarray:
        """Mask over used correspondences whose recovered depth is negative."""
        return self.estimate.depths < 0


def lift_frame(
    cam: CalibratedCamera,
    keypoints,
    rel_joints,
    cfg: SolverConfig = SolverConfig(),
) -> LiftResult:
    """Lift one frame to camera space from 2D keypoints and root-relative joints.

    keypoints: (N, 3) array-like of (u, v, confidence) rows, aligned by index
    with rel_joints (N, 3). Keypoints outside the image bounds or with
    non-positive confidence are excluded before solving; camera-space joints
    are still produced for every index.
    """
    kps = np.asarray(keypoints, dtype=float)
    joints = np.asarray(rel_joints, dtype=float)
    if kps.ndim != 2 or kps.shape[1] != 3 or joints.shape != (kps.shape[0], 3):
        raise ValueError("keypoints must be (N, 3) of (u, v, w) aligned with (N, 3) joints")

    intr = cam.intrinsics
    used = (
        (kps[:, 0] >= 0)
        & (kps[:, 0] < intr.width)
        & (kps[:, 1] >= 0)
        & (kps[:, 1] < intr.height)
        & (kps[:, 2] > 0)
    )
    n_used = int(used.sum())
    if n_used == 0:
        raise AllKeypointsMaskedError("every keypoint is out of frame or zero-confidence")
    if n_used < 2:
        raise TooFewCorrespondencesError("only one visible keypoint; translation is unobservable")

    rays = unproject_ray(cam, kps[used, 0], kps[used, 1])
    corrs = [
        Correspondence(joint=j, ray=d, weight=w)
        for j, d, w in zip(joints[used], rays, kps[used, 2])
    ]
    est = solve_translation(corrs, cfg)
    return LiftResult(estimate=est, camera_joints=est.translation[None, :] + joints, used=used)
