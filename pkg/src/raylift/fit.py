"""Two-stage forearm fitting to point clouds, plus latent-space training.

Stage one recovers the global pose (6D rotation + translation) of a fixed
shape; stage two freezes the pose and refines the shape parameters. Both
stages minimize Chamfer objectives with an Adam optimizer, a
reduce-on-plateau learning-rate schedule and early stopping, all full-batch.
Gradients are analytic with nearest-neighbor correspondences held fixed
within each iteration (re-computed every iteration) and are validated against
central finite differences in the test suite.

Unit convention: the public API exchanges millimeters, but the stage
objectives run internally in meters with sum-form Chamfer terms. The loss
weights, learning rates and stopping thresholds form one coherent recipe only
at that scale; in millimeters the volume term's gradients (mm^3 vs mm^2)
dominate Adam's second moments and stall the Chamfer directions. Overrides
passed through OptimConfig are therefore interpreted in meter units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateRingError,
    EmptySetError,
    InsufficientCorpusError,
    NonFiniteLossError,
)
from .farm import (
    FarmShape,
    PcaSpace,
    canonical_gauge,
    matrix_to_rot6d,
    rot6d_to_matrix,
    swing_twist,
    volume_frusta,
)


def chamfer(points_a, points_b) -> float:
    """Symmetric mean of squared nearest-neighbor distances between two point sets."""
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySetError("chamfer distance needs non-empty point sets")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))


def _chamfer_value_grad(points, target, target_tree):
    """Sum-form Chamfer value and its gradient w.r.t. `points`, correspondences fixed.

    The fitting stages use the sum (not mean) of squared nearest-neighbor
    distances: the stage weights are balanced against absolute point counts.
    """
    d_pt, idx_pt = target_tree.query(points)
    tree_p = cKDTree(points)
    d_tp, idx_tp = tree_p.query(target)
    value = float(np.sum(d_pt**2) + np.sum(d_tp**2))
    grad = 2.0 * (points - target[idx_pt])
    np.add.at(grad, idx_tp, 2.0 * (points[idx_tp] - target))
    return value, grad


@dataclass(frozen=True)
class FitWeights:
    """Loss weights for the two stages.

    `taper` penalizes |r2 - r1|. A negative value turns it into a taper
    reward, which makes the shape objective unbounded below (the offset
    profile can compensate any r1/r2 drift at fixed geometry), so the default
    is the penalty of matching magnitude.
    """

    pose_ring: float = 100.0
    pose_cloud: float = 10.0
    shape_ring: float = 10.0
    shape_cloud: float = 1.0
    volume: float = 1.0
    taper: float = 0.1
    elbow_anchor: float = 0.01
    wrist_anchor: float = 0.01


@dataclass(frozen=True)
class OptimConfig:
    """Adam + plateau schedule + early stopping.

    `lr` is a scalar applied to every parameter group or a dict keyed by group
    name. The plateau schedule multiplies the rate by `plateau_factor` once
    the loss has failed to improve for more than `plateau_patience`
    consecutive iterations (so a flat loss decays at iterations p+1, 2(p+1),
    ...). Early stopping fires after `early_patience` consecutive iterations
    without an improvement larger than `delta_min`.
    """

    lr: float | dict = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.9
    plateau_patience: int = 10
    early_patience: int = 100
    delta_min: float = 1e-6
    max_iters: int = 5000

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 1 or self.early_patience < 1:
            raise ValueError("patiences must be >= 1")

    def lr_for(self, name: str) -> float:
        return self.lr[name] if isinstance(self.lr, dict) else self.lr


POSE_OPTIM = OptimConfig(lr=0.1)
SHAPE_OPTIM = OptimConfig(lr={"core": 0.001, "offsets": 0.01})


@dataclass
class MinimizeResult:
    params: dict
    loss: float
    iterations: int
    lr_scales: list
    losses: list


def minimize(fun, params: dict, optim: OptimConfig, project=None) -> MinimizeResult:
    """Full-batch Adam with per-group rates; returns the best-seen parameters.

    `fun(params) -> (loss, grads)` with grads keyed like params. `project`,
    when given, is applied to the parameters after every update (e.g. radius
    clamping).
    """
    params = {k: np.asarray(v, dtype=float).copy() for k, v in params.items()}
    loss, grads = fun(params)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"objective not finite at the initial point ({loss})")

    best_loss = loss
    best_params = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    lr_scale = 1.0
    es_best, es_bad = loss, 0
    pl_best, pl_bad = loss, 0
    lr_scales, losses = [], [loss]
    iterations = 0

    for step in range(1, optim.max_iters + 1):
        bias1 = 1.0 - optim.beta1**step
        bias2 = 1.0 - optim.beta2**step
        for k in params:
            g = grads[k]
            m[k] = optim.beta1 * m[k] + (1.0 - optim.beta1) * g
            v2[k] = optim.beta2 * v2[k] + (1.0 - optim.beta2) * g * g
            step_vec = (m[k] / bias1) / (np.sqrt(v2[k] / bias2) + optim.adam_eps)
            params[k] = params[k] - optim.lr_for(k) * lr_scale * step_vec
        if project is not None:
            params = project(params)

        loss, grads = fun(params)
        if not math.isfinite(loss):
            raise NonFiniteLossError(f"objective became non-finite at iteration {step}")
        iterations = step
        lr_scales.append(lr_scale)
        losses.append(loss)

        if loss < best_loss:
            best_loss = loss
            best_params = {k: v.copy() for k, v in params.items()}

        if loss < es_best - optim.delta_min:
            es_best, es_bad = loss, 0
        else:
            es_bad += 1
            if es_bad >= optim.early_patience:
                break

        if loss < pl_best:
            pl_best, pl_bad = loss, 0
        else:
            pl_bad += 1
            if pl_bad > optim.plateau_patience:
                lr_scale *= optim.plateau_factor
                pl_bad = 0

    return MinimizeResult(
        params=best_params, loss=best_loss, iterations=iterations,
        lr_scales=lr_scales, losses=losses,
    )


@dataclass(frozen=True)
class RingInit:
    """Coarse geometry estimated from the two boundary rings."""

    length: float
    elbow_radius: float
    wrist_radius: float
    rotation: np.ndarray  # (3, 3), maps local +z to the limb axis
    translation: np.ndarray  # (3,), places the posed elbow joint at the elbow centroid


def _rotation_from_z(axis: np.ndarray) -> np.ndarray:
    """Minimal rotation taking +z to the given unit axis (pure swing)."""
    ez = np.array([0.0, 0.0, 1.0])
    v = np.cross(ez, axis)
    s = np.linalg.norm(v)
    c = float(ez @ axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])  # 180 degrees about x
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))


def init_from_rings(elbow_ring, wrist_ring) -> RingInit:
    """Estimate length, end radii and an axis pose from the two boundary rings.

    The axis is the principal direction of the combined centered ring points,
    oriented elbow to wrist; radii are mean point-to-axis distances per ring.
    """
    e = np.atleast_2d(np.asarray(elbow_ring, dtype=float))
    w = np.atleast_2d(np.asarray(wrist_ring, dtype=float))
    if e.shape[0] < 3 or w.shape[0] < 3:
        raise DegenerateRingError("each ring needs at least 3 points")
    ce, cw = e.mean(axis=0), w.mean(axis=0)
    length = float(np.linalg.norm(cw - ce))
    if length < 1e-6:
        raise DegenerateRingError("ring centroids coincide")

    pts = np.vstack([e, w])
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    if axis @ (cw - ce) < 0:
        axis = -axis

    def ring_radius(ring, centroid):
        rel = ring - centroid
        perp = rel - np.outer(rel @ axis, axis)
        return float(np.linalg.norm(perp, axis=1).mean())

    rotation = _rotation_from_z(axis)
    mid = np.array([0.0, 0.0, 0.5 * length])
    translation = ce - mid + 0.5 * length * axis
    return RingInit(
        length=length,
        elbow_radius=ring_radius(e, ce),
        wrist_radius=ring_radius(w, cw),
        rotation=rotation,
        translation=translation,
    )


def _rot6d_backward(r6: np.ndarray, grad_rot: np.ndarray) -> np.ndarray:
    """Adjoint of rot6d_to_matrix: pull a dL/dR back to the 6 raw parameters."""
    a1, a2 = r6[:3], r6[3:]
    n1 = np.linalg.norm(a1)
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    b2 = u2 / n2
    g1, g2, g3 = grad_rot[:, 0], grad_rot[:, 1], grad_rot[:, 2]

    gb2 = g2 + np.cross(g3, b1)
    gb1 = g1 + np.cross(b2, g3)
    gu2 = (gb2 - (gb2 @ b2) * b2) / n2
    ga2 = gu2 - (gu2 @ b1) * b1
    gb1 = gb1 - (gu2 @ b1) * a2 - (a2 @ b1) * gu2
    ga1 = (gb1 - (gb1 @ b1) * b1) / n1
    return np.concatenate([ga1, ga2])


def _lattice_and_rings(shape_vec, n_theta):
    """Unposed lattice vertices for raw (r1, r2, h, rho) and the boundary ring indices."""
    r1, r2, h = shape_vec[0], shape_vec[1], shape_vec[2]
    rho = shape_vec[3:]
    n_z = rho.size
    frac = np.arange(n_z) / (n_z - 1)
    radii = r1 + (r2 - r1) * frac + rho
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rings = np.empty((n_z, n_theta, 3))
    rings[:, :, 0] = radii[:, None] * cos_t[None, :]
    rings[:, :, 1] = radii[:, None] * sin_t[None, :]
    rings[:, :, 2] = (frac * h)[:, None]
    extra = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, h], [0.0, 0.0, 0.5 * h]])
    verts = np.vstack([rings.reshape(-1, 3), extra])
    ring_idx = np.concatenate([np.arange(n_theta), np.arange((n_z - 1) * n_theta, n_z * n_theta)])
    return verts, ring_idx, cos_t, sin_t, frac


def _pose_objective(ring_target, cloud_target, shape: FarmShape, weights: FitWeights, n_theta):
    ring_target = np.atleast_2d(np.asarray(ring_target, dtype=float))
    cloud_target = np.atleast_2d(np.asarray(cloud_target, dtype=float))
    if ring_target.size == 0 or cloud_target.size == 0:
        raise EmptySetError("fit targets must be non-empty")
    verts, ring_idx, *_ = _lattice_and_rings(shape.as_vector(), n_theta)
    center = np.array([0.0, 0.0, 0.5 * shape.length])
    local = verts - center
    ring_tree = cKDTree(ring_target)
    cloud_tree = cKDTree(cloud_target)

    def fun(params):
        rot = rot6d_to_matrix(params["rot6"])
        posed = local @ rot.T + center + params["trans"]
        loss = 0.0
        grad_pts = np.zeros_like(posed)
        if weights.pose_ring != 0.0:
            val, g = _chamfer_value_grad(posed[ring_idx], ring_target, ring_tree)
            loss += weights.pose_ring * val
            grad_pts[ring_idx] += weights.pose_ring * g
        if weights.pose_cloud != 0.0:
            val, g = _chamfer_value_grad(posed, cloud_target, cloud_tree)
            loss += weights.pose_cloud * val
            grad_pts += weights.pose_cloud * g
        grad_rot = grad_pts.T @ local
        return loss, {
            "rot6": _rot6d_backward(params["rot6"], grad_rot),
            "trans": grad_pts.sum(axis=0),
        }

    return fun


MM_TO_M = 1e-3


def _scale_shape(shape: FarmShape, s: float) -> FarmShape:
    return FarmShape(
        shape.elbow_radius * s, shape.wrist_radius * s, shape.length * s,
        shape.radial_offsets * s,
    )


def fit_pose(
    ring_target,
    cloud_target,
    shape: FarmShape,
    init_rotation,
    init_translation,
    weights: FitWeights = FitWeights(),
    optim: OptimConfig = POSE_OPTIM,
    n_theta: int = 50,
):
    """Optimize global rotation and translation (mm) of a frozen shape.

    Runs in meter units internally; the reported loss is meter-scale. The
    rotation is optimized in the 6D parameterization and returned as its
    swing component only (axial spin is unobservable).
    """
    fun = _pose_objective(
        np.asarray(ring_target, dtype=float) * MM_TO_M,
        np.asarray(cloud_target, dtype=float) * MM_TO_M,
        _scale_shape(shape, MM_TO_M),
        weights,
        n_theta,
    )
    params = {
        "rot6": matrix_to_rot6d(np.asarray(init_rotation, dtype=float)),
        "trans": np.asarray(init_translation, dtype=float) * MM_TO_M,
    }
    res = minimize(fun, params, optim)
    swing, _ = swing_twist(rot6d_to_matrix(res.params["rot6"]))
    return swing, res.params["trans"] / MM_TO_M, res


MIN_LEVEL_RADIUS = 0.5  # mm, iteration clamp


def _shape_objective(
    ring_target, cloud_target, rotation, translation, weights, n_theta,
    target_volume, elbow_anchor, wrist_anchor,
):
    ring_target = np.atleast_2d(np.asarray(ring_target, dtype=float))
    cloud_target = np.atleast_2d(np.asarray(cloud_target, dtype=float))
    if ring_target.size == 0 or cloud_target.size == 0:
        raise EmptySetError("fit targets must be non-empty")
    rot = np.asarray(rotation, dtype=float)
    trans = np.asarray(translation, dtype=float)
    ring_tree = cKDTree(ring_target)
    cloud_tree = cKDTree(cloud_target)

    def fun(params):
        core, rho = params["core"], params["offsets"]
        r1, r2, h = core
        vec = np.concatenate([core, rho])
        verts, ring_idx, cos_t, sin_t, frac = _lattice_and_rings(vec, n_theta)
        n_z = rho.size
        center = np.array([0.0, 0.0, 0.5 * h])
        posed = (verts - center) @ rot.T + center + trans

        loss = 0.0
        grad_pts = np.zeros_like(posed)
        if weights.shape_ring != 0.0:
            val, g = _chamfer_value_grad(posed[ring_idx], ring_target, ring_tree)
            loss += weights.shape_ring * val
            grad_pts[ring_idx] += weights.shape_ring * g
        if weights.shape_cloud != 0.0:
            val, g = _chamfer_value_grad(posed, cloud_target, cloud_tree)
            loss += weights.shape_cloud * val
            grad_pts += weights.shape_cloud * g

        # pull point gradients back to the unposed lattice and the recentering
        grad_local = grad_pts @ rot  # dL/dv for the v-dependence
        grad_center = grad_pts.sum(axis=0) - grad_local.sum(axis=0)

        ring_grad = grad_local[: n_theta * n_z].reshape(n_z, n_theta, 3)
        d_radius = ring_grad[:, :, 0] @ cos_t + ring_grad[:, :, 1] @ sin_t  # (n_z,)
        dh = float(ring_grad[:, :, 2].sum(axis=1) @ frac)
        dh += float(grad_local[-2, 2]) + 0.5 * float(grad_local[-1, 2])  # top, mid markers
        dh += 0.5 * float(grad_center[2])

        # analytic volume term: |Vol - target|
        radii = r1 + (r2 - r1) * frac + rho
        dz = h / (n_z - 1)
        vol = math.pi / 3.0 * dz * float(np.sum(radii[:-1] ** 2 + radii[:-1] * radii[1:] + radii[1:] ** 2))
        vol_sign = weights.volume * float(np.sign(vol - target_volume))
        loss += weights.volume * abs(vol - target_volume)
        dvol_dr = np.zeros(n_z)
        dvol_dr[:-1] += 2.0 * radii[:-1] + radii[1:]
        dvol_dr[1:] += radii[:-1] + 2.0 * radii[1:]
        dvol_dr *= math.pi / 3.0 * dz
        d_radius = d_radius + vol_sign * dvol_dr
        dh += vol_sign * (vol / h)

        # taper reward and anchor penalties
        loss += weights.taper * abs(r2 - r1)
        loss += weights.elbow_anchor * abs(r1 - elbow_anchor)
        loss += weights.wrist_anchor * abs(r2 - wrist_anchor)
        dr1 = float(d_radius @ (1.0 - frac))
        dr2 = float(d_radius @ frac)
        dr1 += -weights.taper * np.sign(r2 - r1) + weights.elbow_anchor * np.sign(r1 - elbow_anchor)
        dr2 += weights.taper * np.sign(r2 - r1) + weights.wrist_anchor * np.sign(r2 - wrist_anchor)

        return loss, {
            "core": np.array([dr1, dr2, dh]),
            "offsets": d_radius.copy(),
        }

    return fun


def _clamp_shape(params):
    # meter-space projection: level radii >= 0.5mm, length positive
    core, rho = params["core"], params["offsets"]
    floor = MIN_LEVEL_RADIUS * MM_TO_M
    core[2] = max(core[2], 2.0 * floor)
    n_z = rho.size
    frac = np.arange(n_z) / (n_z - 1)
    radii = core[0] + (core[1] - core[0]) * frac + rho
    low = radii < floor
    rho[low] += floor - radii[low]
    return {"core": core, "offsets": rho}


def fit_shape(
    ring_target,
    cloud_target,
    rotation,
    translation,
    init_shape: FarmShape,
    weights: FitWeights = FitWeights(),
    optim: OptimConfig = SHAPE_OPTIM,
    target_volume: float = None,
    anchors: tuple = None,
    n_theta: int = 50,
):
    """Optimize (r1, r2, h, offsets) in mm with the pose frozen.

    `anchors` are the reference end radii (mm) for the anchor penalties,
    defaulting to the initial shape's; `target_volume` is mm^3 and defaults to
    the initial shape's frusta volume. Runs in meter units internally; level
    radii are clamped to at least 0.5mm after every step.
    """
    if target_volume is None:
        target_volume = volume_frusta(init_shape)
    if anchors is None:
        anchors = (init_shape.elbow_radius, init_shape.wrist_radius)
    init_m = _scale_shape(init_shape, MM_TO_M)
    fun = _shape_objective(
        np.asarray(ring_target, dtype=float) * MM_TO_M,
        np.asarray(cloud_target, dtype=float) * MM_TO_M,
        rotation,
        np.asarray(translation, dtype=float) * MM_TO_M,
        weights,
        n_theta,
        target_volume * MM_TO_M**3,
        anchors[0] * MM_TO_M,
        anchors[1] * MM_TO_M,
    )
    params = {
        "core": np.array([init_m.elbow_radius, init_m.wrist_radius, init_m.length]),
        "offsets": init_m.radial_offsets.copy(),
    }
    res = minimize(fun, params, optim, project=_clamp_shape)
    core, rho = res.params["core"], res.params["offsets"]
    fitted = FarmShape(float(core[0]), float(core[1]), float(core[2]), rho)
    # the L1 terms pick an arbitrary split between end radii and offsets;
    # report the canonical (least-squares linear) gauge of the same geometry
    return canonical_gauge(_scale_shape(fitted, 1.0 / MM_TO_M)), res


@dataclass(frozen=True)
class FitConfig:
    weights: FitWeights = FitWeights()
    pose_optim: OptimConfig = POSE_OPTIM
    shape_optim: OptimConfig = SHAPE_OPTIM
    n_theta: int = 50
    n_z: int = 10
    target_volume: float = None  # defaults to the ring-initialized frusta volume


@dataclass(frozen=True)
class FitResult:
    shape: FarmShape
    rotation: np.ndarray  # (3, 3) swing-only
    translation: np.ndarray  # (3,)
    pose_loss: float
    shape_loss: float
    pose_iterations: int
    shape_iterations: int

    def to_json(self) -> dict:
        return {
            "shape": {
                "elbow_radius": self.shape.elbow_radius,
                "wrist_radius": self.shape.wrist_radius,
                "length": self.shape.length,
                "n_z": self.shape.n_z,
                "radial_offsets": self.shape.radial_offsets.tolist(),
            },
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "pose_loss": self.pose_loss,
            "shape_loss": self.shape_loss,
            "pose_iterations": self.pose_iterations,
            "shape_iterations": self.shape_iterations,
        }


def fit_farm(cloud_target, elbow_ring, wrist_ring, cfg: FitConfig = FitConfig()) -> FitResult:
    """Ring init, pose stage, then shape stage. Deterministic for fixed inputs."""
    init = init_from_rings(elbow_ring, wrist_ring)
    shape0 = FarmShape.tapered(
        max(init.elbow_radius, MIN_LEVEL_RADIUS),
        max(init.wrist_radius, MIN_LEVEL_RADIUS),
        init.length,
        cfg.n_z,
    )
    ring_target = np.vstack([np.atleast_2d(elbow_ring), np.atleast_2d(wrist_ring)])

    rotation, translation, pose_res = fit_pose(
        ring_target, cloud_target, shape0, init.rotation, init.translation,
        cfg.weights, cfg.pose_optim, cfg.n_theta,
    )
    target_volume = cfg.target_volume if cfg.target_volume is not None else volume_frusta(shape0)
    shape, shape_res = fit_shape(
        ring_target, cloud_target, rotation, translation, shape0,
        cfg.weights, cfg.shape_optim, target_volume,
        anchors=(init.elbow_radius, init.wrist_radius), n_theta=cfg.n_theta,
    )
    return FitResult(
        shape=shape,
        rotation=rotation,
        translation=translation,
        pose_loss=pose_res.loss,
        shape_loss=shape_res.loss,
        pose_iterations=pose_res.iterations,
        shape_iterations=shape_res.iterations,
    )


def train_pca(corpus, dim: int) -> PcaSpace:
    """Principal directions of a shape-vector corpus; basis columns orthonormal.

    `explained` is the retained fraction of total variance; a zero-variance
    corpus reports explained = 1 with an arbitrary orthonormal basis.
    """
    x = np.atleast_2d(np.asarray(corpus, dtype=float))
    n, k = x.shape
    if n <= dim:
        raise InsufficientCorpusError(f"corpus of {n} vectors cannot support {dim} components")
    if dim < 1 or dim > k:
        raise ValueError("dim must lie in [1, vector length]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    total = float(np.sum(sing**2))
    if total < 1e-30:
        return PcaSpace(basis=np.eye(k)[:, :dim], mean=mean, explained=1.0)
    explained = float(np.sum(sing[:dim] ** 2) / total)
    return PcaSpace(basis=vt[:dim].T.copy(), mean=mean, explained=explained)
