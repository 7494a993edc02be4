"""Pose evaluation metrics: CS/RS/PS mean joint errors, acceleration error,
SO(3) geodesic distance and hand-scale error.

Joint errors are millimeters; acceleration errors are m/s^2. All functions
are pure and operate on immutable trajectories.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    JointMissingError,
    NotARotationError,
    ShapeMismatchError,
    TooShortError,
)

WRIST_INDEX = 0
MIDDLE_MCP_INDEX = 9


@dataclass(frozen=True)
class JointTrajectory:
    """A sequence of J-joint skeletons with an optional per-joint visibility mask."""

    frames: np.ndarray  # (T, J, 3) mm
    fps: float = 30.0
    visibility: np.ndarray = None  # (T, J) bool

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ShapeMismatchError(f"frames must be (T, J, 3), got {frames.shape}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        vis = self.visibility
        vis = np.ones(frames.shape[:2], dtype=bool) if vis is None else np.asarray(vis, dtype=bool)
        if vis.shape != frames.shape[:2]:
            raise ShapeMismatchError("visibility mask must be (T, J)")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "visibility", vis)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


def _check_aligned(pred: JointTrajectory, gt: JointTrajectory) -> np.ndarray:
    if pred.frames.shape != gt.frames.shape:
        raise ShapeMismatchError(
            f"trajectory shapes differ: {pred.frames.shape} vs {gt.frames.shape}"
        )
    return pred.visibility & gt.visibility


def cs_mje(pred: JointTrajectory, gt: JointTrajectory) -> float:
    """Camera-space mean joint error: mean L2 distance over visible (frame, joint) pairs."""
    vis = _check_aligned(pred, gt)
    if not vis.any():
        raise JointMissingError("no visible (frame, joint) pairs")
    dist = np.linalg.norm(pred.frames - gt.frames, axis=2)
    return float(dist[vis].mean())


def rs_mje(pred: JointTrajectory, gt: JointTrajectory, root_index: int = WRIST_INDEX) -> float:
    """Root-relative mean joint error: per-frame root subtraction on both, then cs_mje."""
    vis = _check_aligned(pred, gt)
    if not vis[:, root_index].all():
        raise JointMissingError("root joint must be visible in every frame")
    p = pred.frames - pred.frames[:, root_index : root_index + 1]
    g = gt.frames - gt.frames[:, root_index : root_index + 1]
    return cs_mje(
        JointTrajectory(p, pred.fps, pred.visibility), JointTrajectory(g, gt.fps, gt.visibility)
    )


def procrustes_align(pred_frame, gt_frame):
    """Similarity Procrustes (closed form): (scale, R, t) minimizing |s R p + t - g|^2."""
    x = np.asarray(pred_frame, dtype=float)
    y = np.asarray(gt_frame, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ShapeMismatchError(f"point sets must share shape (J, 3), got {x.shape}, {y.shape}")
    n = x.shape[0]
    if n < 3:
        raise DegenerateConfigurationError("need at least 3 points")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= 1e-12 * max(d[0], 1e-300):
        raise DegenerateConfigurationError("point set has rank < 2")
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    var_x = float((xc**2).sum()) / n
    scale = float(np.trace(np.diag(d) @ s)) / var_x
    t = my - scale * rot @ mx
    return scale, rot, t


def ps_mje(pred: JointTrajectory, gt: JointTrajectory) -> float:
    """Procrustes-aligned mean joint error; frames with fewer than 3 visible joints are skipped."""
    vis = _check_aligned(pred, gt)
    residuals = []
    for t in range(pred.n_frames):
        idx = np.flatnonzero(vis[t])
        if idx.size < 3:
            continue
        p, g = pred.frames[t, idx], gt.frames[t, idx]
        scale, rot, trans = procrustes_align(p, g)
        aligned = scale * p @ rot.T + trans
        residuals.append(np.linalg.norm(aligned - g, axis=1))
    if not residuals:
        raise JointMissingError("no frame has 3 or more visible joints")
    return float(np.concatenate(residuals).mean())


def acc_error(pred: JointTrajectory, gt: JointTrajectory) -> float:
    """Acceleration error (m/s^2): discrepancy of second temporal differences.

    Per interior frame, the mean over joints visible in the whole triple is
    taken first, then the mean over frames.
    """
    vis = _check_aligned(pred, gt)
    if pred.n_frames < 3:
        raise TooShortError("need at least 3 frames")
    fps2 = pred.fps * pred.fps
    a_pred = (pred.frames[2:] - 2 * pred.frames[1:-1] + pred.frames[:-2]) * fps2
    a_gt = (gt.frames[2:] - 2 * gt.frames[1:-1] + gt.frames[:-2]) * fps2
    ok = vis[2:] & vis[1:-1] & vis[:-2]
    diff = np.linalg.norm(a_pred - a_gt, axis=2)  # (T-2, J) mm/s^2
    per_frame = [diff[t, ok[t]].mean() for t in range(diff.shape[0]) if ok[t].any()]
    if not per_frame:
        raise JointMissingError("no joint is visible across any frame triple")
    return float(np.mean(per_frame)) / 1000.0


def geodesic_so3(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic distance on SO(3) in radians: arccos((tr(R1^T R2) - 1) / 2), clamped."""
    for r in (r1, r2):
        r = np.asarray(r, dtype=float)
        if r.shape != (3, 3) or np.linalg.norm(r.T @ r - np.eye(3)) > 1e-6 or np.linalg.det(r) < 0:
            raise NotARotationError("inputs must be 3x3 rotation matrices")
    c = (np.trace(np.asarray(r1).T @ np.asarray(r2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def hand_scale_error(
    pred: JointTrajectory,
    gt: JointTrajectory,
    wrist_idx: int = WRIST_INDEX,
    middle_mcp_idx: int = MIDDLE_MCP_INDEX,
) -> float:
    """Mean absolute error of the wrist-to-middle-MCP distance over frames."""
    vis = _check_aligned(pred, gt)
    if max(wrist_idx, middle_mcp_idx) >= pred.n_joints:
        raise JointMissingError("wrist or middle-MCP index out of range")
    ok = vis[:, wrist_idx] & vis[:, middle_mcp_idx]
    if not ok.any():
        raise JointMissingError("wrist and middle MCP never jointly visible")
    span_p = np.linalg.norm(
        pred.frames[ok, wrist_idx] - pred.frames[ok, middle_mcp_idx], axis=1
    )
    span_g = np.linalg.norm(gt.frames[ok, wrist_idx] - gt.frames[ok, middle_mcp_idx], axis=1)
    return float(np.abs(span_p - span_g).mean())


@dataclass(frozen=True)
class MetricReport:
    cs_mje_mm: float
    rs_mje_mm: float
    ps_mje_mm: float
    cs_acc_ms2: float
    rs_acc_ms2: float
    hand_scale_error_mm: float
    n_frames: int
    n_joints: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def compute_report(
    pred: JointTrajectory,
    gt: JointTrajectory,
    root_index: int = WRIST_INDEX,
    wrist_idx: int = WRIST_INDEX,
    middle_mcp_idx: int = MIDDLE_MCP_INDEX,
) -> MetricReport:
    """Run the full metric suite on an aligned trajectory pair."""
    root = slice(root_index, root_index + 1)
    pred_rs = JointTrajectory(pred.frames - pred.frames[:, root], pred.fps, pred.visibility)
    gt_rs = JointTrajectory(gt.frames - gt.frames[:, root], gt.fps, gt.visibility)
    return MetricReport(
        cs_mje_mm=cs_mje(pred, gt),
        rs_mje_mm=rs_mje(pred, gt, root_index),
        ps_mje_mm=ps_mje(pred, gt),
        cs_acc_ms2=acc_error(pred, gt),
        rs_acc_ms2=acc_error(pred_rs, gt_rs),
        hand_scale_error_mm=hand_scale_error(pred, gt, wrist_idx, middle_mcp_idx),
        n_frames=pred.n_frames,
        n_joints=pred.n_joints,
    )
