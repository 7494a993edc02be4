"""Synthetic hand-arm scenes with exact ground truth for oracle testing.

Skeleton templates are geometric, not anatomical: a fan of finger chains with
the wrist-to-middle-MCP distance pinned exactly to the requested hand scale,
plus a colinear elbow/mid/wrist arm chain behind the wrist. Motion follows a
Catmull-Rom spline through random points inside the camera frustum, so
second derivatives are smooth and acceleration metrics are meaningful.
Everything is reproducible from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CalibratedCamera, project, unproject_ray
from .errors import BehindCameraError, FovExhaustedError

N_HAND_JOINTS = 21
N_JOINTS = 24  # 21 hand + elbow, mid, wrist

_FINGER_BASE_ANGLES = np.deg2rad([-70.0, -30.0, 0.0, 28.0, 55.0])  # thumb..pinky, in-plane fan
_FINGER_MCP_FRAC = (0.55, 0.95, 1.0, 0.95, 0.85)  # MCP distance as a fraction of hand scale
_FINGER_SEG_FRAC = (0.45, 0.40, 0.42, 0.40, 0.33)  # per-bone length fraction beyond the MCP


def gen_skeleton(hand_scale: float, seed: int) -> np.ndarray:
    """24x3 root-relative template (mm): wrist at the origin, 5 four-joint fingers, arm chain.

    The wrist-to-middle-MCP distance equals hand_scale exactly; articulation
    jitter varies with the seed at fixed scale.
    """
    if hand_scale <= 0:
        raise ValueError("hand_scale must be positive")
    rng = np.random.default_rng(seed)
    joints = np.zeros((N_JOINTS, 3))

    for f in range(5):
        angle = _FINGER_BASE_ANGLES[f] + rng.normal(scale=0.06)
        direction = np.array([np.sin(angle), np.cos(angle), rng.normal(scale=0.15)])
        direction /= np.linalg.norm(direction)
        mcp_dist = hand_scale * (1.0 if f == 2 else _FINGER_MCP_FRAC[f] * rng.uniform(0.96, 1.04))
        base = 1 + 4 * f
        joints[base] = mcp_dist * direction
        seg = hand_scale * _FINGER_SEG_FRAC[f]
        tip_dir = direction
        for k in range(1, 4):
            bend = rng.normal(scale=0.12, size=3)
            tip_dir = tip_dir + bend
            tip_dir /= np.linalg.norm(tip_dir)
            joints[base + k] = joints[base + k - 1] + seg * (0.8**k) * tip_dir

    arm_dir = np.array([rng.normal(scale=0.1), -1.0, rng.normal(scale=0.1)])
    arm_dir /= np.linalg.norm(arm_dir)
    arm_len = 250.0 * hand_scale / 90.0
    arm_wrist = 0.03 * arm_len * arm_dir
    joints[21] = arm_wrist + arm_len * arm_dir  # elbow
    joints[22] = arm_wrist + 0.5 * arm_len * arm_dir  # mid forearm
    joints[23] = arm_wrist
    return joints


@dataclass(frozen=True)
class MotionSpec:
    n_control: int = 6
    depth_range: tuple = (450.0, 850.0)
    margin: float = 0.04  # extra border padding, fraction of each image dimension


@dataclass(frozen=True)
class SyntheticScene:
    camera: CalibratedCamera
    gt_translation: np.ndarray  # (T, 3) mm
    rel_joints: np.ndarray  # (T, 24, 3) mm
    keypoints: np.ndarray  # (T, 24, 3): u, v, confidence
    cs_joints: np.ndarray  # (T, 24, 3) mm, ground truth camera-space joints
    pixel_sigma: float
    seed: int

    @property
    def n_frames(self) -> int:
        return self.gt_translation.shape[0]


def _catmull_rom(ctrl: np.ndarray, n_samples: int) -> np.ndarray:
    """Uniform Catmull-Rom spline through all control points."""
    if len(ctrl) == 1 or n_samples == 1:
        return np.tile(ctrl[0], (n_samples, 1))
    pts = np.vstack([ctrl[0], ctrl, ctrl[-1]])
    n_seg = len(ctrl) - 1
    s = np.linspace(0.0, n_seg, n_samples, endpoint=False)
    seg = np.minimum(s.astype(int), n_seg - 1)
    t = (s - seg)[:, None]
    p0, p1, p2, p3 = pts[seg], pts[seg + 1], pts[seg + 2], pts[seg + 3]
    return 0.5 * (
        2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t**2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t**3
    )


_MAX_PLACEMENT_ATTEMPTS = 100


def gen_scene(
    cam: CalibratedCamera,
    n_frames: int,
    motion: MotionSpec = MotionSpec(),
    pixel_sigma: float = 0.0,
    seed: int = 0,
    hand_scale: float = 90.0,
) -> SyntheticScene:
    """Generate a scene whose every joint projects inside the image in every frame.

    Observed keypoints are the exact projections plus Gaussian pixel noise;
    confidences are 1 / (1 + sigma). Trajectories that leave the field of
    view are rejected and resampled, up to a bounded number of attempts.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(seed)
    skeleton = gen_skeleton(hand_scale, seed)
    intr = cam.intrinsics

    # the wrist path must keep every joint in frame: shrink the control-point
    # region by the skeleton's projected extent at the nearest depth
    lo, hi = skeleton.min(axis=0), skeleton.max(axis=0)
    z_near = motion.depth_range[0]
    mx, my = motion.margin * intr.width, motion.margin * intr.height
    u_lo = 1.0 + intr.fx * max(0.0, -lo[0]) / z_near + mx
    u_hi = intr.width - 1.0 - intr.fx * max(0.0, hi[0]) / z_near - mx
    v_lo = 1.0 + intr.fy * max(0.0, -lo[1]) / z_near + my
    v_hi = intr.height - 1.0 - intr.fy * max(0.0, hi[1]) / z_near - my
    if u_lo >= u_hi or v_lo >= v_hi:
        raise FovExhaustedError(
            "field of view cannot contain the skeleton at the requested depths"
        )

    for _ in range(_MAX_PLACEMENT_ATTEMPTS):
        u_ctrl = rng.uniform(u_lo, u_hi, size=motion.n_control)
        v_ctrl = rng.uniform(v_lo, v_hi, size=motion.n_control)
        depths = rng.uniform(*motion.depth_range, size=motion.n_control)
        ctrl = unproject_ray(cam, u_ctrl, v_ctrl) * depths[:, None]
        translation = _catmull_rom(ctrl, n_frames)

        rel = np.tile(skeleton, (n_frames, 1, 1))
        cs = translation[:, None, :] + rel
        try:
            u, v = project(cam, cs.reshape(-1, 3))
        except BehindCameraError:
            continue
        inside = (u >= 1) & (u < intr.width - 1) & (v >= 1) & (v < intr.height - 1)
        if not inside.all():
            continue

        if pixel_sigma > 0:
            u = u + rng.normal(scale=pixel_sigma, size=u.shape)
            v = v + rng.normal(scale=pixel_sigma, size=v.shape)
        conf = 1.0 / (1.0 + pixel_sigma)
        kps = np.stack([u, v, np.full_like(u, conf)], axis=1).reshape(n_frames, N_JOINTS, 3)
        return SyntheticScene(
            camera=cam,
            gt_translation=translation,
            rel_joints=rel,
            keypoints=kps,
            cs_joints=cs,
            pixel_sigma=pixel_sigma,
            seed=seed,
        )
    raise FovExhaustedError(
        f"could not place a trajectory inside the field of view in {_MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def frame_records(scene: SyntheticScene) -> list[dict]:
    """Frames in the JSONL record layout consumed by the command-line lift."""
    out = []
    for i in range(scene.n_frames):
        kps = [
            {"u": float(u), "v": float(v), "confidence": float(c), "visible": True}
            for u, v, c in scene.keypoints[i]
        ]
        out.append(
            {
                "frame_id": i,
                "keypoints": kps,
                "rel_joints": [[float(x) for x in row] for row in scene.rel_joints[i]],
            }
        )
    return out


def gt_records(scene: SyntheticScene) -> list[dict]:
    """Ground-truth sidecar records aligned with frame_records by frame_id."""
    return [
        {
            "frame_id": i,
            "translation": [float(x) for x in scene.gt_translation[i]],
            "cs_joints": [[float(x) for x in row] for row in scene.cs_joints[i]],
        }
        for i in range(scene.n_frames)
    ]
