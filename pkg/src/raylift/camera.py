"""Calibrated projection models: pixel/ray geometry, undistortion, crop mapping.

All 3D quantities are in millimeters, angles in radians. Pixel coordinates
follow the usual image convention (origin at the top-left corner, u right,
v down). Camera values are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateComparisonError,
    NonConvergentError,
    RayAtHorizonError,
    SchemaError,
)

_KB_MAX_ITERS = 20
_KB_TOL = 1e-12
_SMALL_RHO = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Focal lengths, principal point and sensor size, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside [0, {self.height})")


@dataclass(frozen=True)
class Pinhole:
    """Perspective projection, no distortion."""


@dataclass(frozen=True)
class EquidistantFisheye:
    """Ideal equidistant fisheye: normalized radius equals the ray angle."""


@dataclass(frozen=True)
class KannalaBrandt:
    """Radial polynomial fisheye: theta_d = theta + k1 t^3 + k2 t^5 + k3 t^7 + k4 t^9."""

    k1: float
    k2: float
    k3: float
    k4: float

    def theta_d(self, theta):
        t2 = theta * theta
        return theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def dtheta_d(self, theta):
        t2 = theta * theta
        return 1.0 + t2 * (3 * self.k1 + t2 * (5 * self.k2 + t2 * (7 * self.k3 + t2 * 9 * self.k4)))


ProjectionModel = Pinhole | EquidistantFisheye | KannalaBrandt


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned pixel box (top-left and bottom-right corners, distorted frame)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate crop box ({self.x0},{self.y0},{self.x1},{self.y1})")

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)


@dataclass(frozen=True)
class CalibratedCamera:
    """Intrinsics plus a projection-model variant; the single source of pixel/ray geometry."""

    intrinsics: Intrinsics
    model: ProjectionModel

    def __post_init__(self):
        if isinstance(self.model, KannalaBrandt):
            _check_kb_monotone(self.intrinsics, self.model)


def _corner_rho_max(intr: Intrinsics) -> float:
    """Largest normalized radius reachable by an interior pixel (at the corners)."""
    rho = 0.0
    for u in (0.0, float(intr.width)):
        for v in (0.0, float(intr.height)):
            rho = max(rho, math.hypot((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy))
    return rho


def _check_kb_monotone(intr: Intrinsics, model: KannalaBrandt) -> None:
    # theta_d must be strictly increasing up to the angle that covers the corner
    # radius, otherwise Newton inversion is ill posed for interior pixels.
    rho_max = _corner_rho_max(intr)
    thetas = np.linspace(0.0, math.pi, 4097)
    td = model.theta_d(thetas)
    cover = int(np.argmax(td >= rho_max)) if np.any(td >= rho_max) else None
    if cover is None:
        raise ValueError(
            f"Kannala-Brandt polynomial never reaches the corner radius {rho_max:.4f} "
            "within a half angle of pi; field of view exceeds the model range"
        )
    head = td[: cover + 2] if cover + 2 <= td.size else td
    if np.any(np.diff(head) <= 0):
        raise ValueError(
            "Kannala-Brandt theta_d(theta) is not strictly increasing over the declared "
            f"field of view (k1={model.k1}, k2={model.k2}, k3={model.k3}, k4={model.k4})"
        )


def normalize_pixel(cam: CalibratedCamera, u, v):
    """Map pixels to dimensionless normalized image coordinates."""
    intr = cam.intrinsics
    return (np.asarray(u, dtype=float) - intr.cx) / intr.fx, (
        np.asarray(v, dtype=float) - intr.cy
    ) / intr.fy


def _solve_kb_theta(model: KannalaBrandt, rho: np.ndarray):
    """Invert theta_d by Newton iteration; returns (theta, converged mask)."""
    theta = rho.copy()
    done = np.zeros(rho.shape, dtype=bool)
    for _ in range(_KB_MAX_ITERS):
        f = model.theta_d(theta) - rho
        step = f / model.dtheta_d(theta)
        theta = theta - np.where(done, 0.0, step)
        done |= np.abs(step) < _KB_TOL
        if done.all():
            break
    return theta, done


def _rays_and_mask(cam: CalibratedCamera, u, v):
    """Unit bearing rays plus a per-pixel success mask (no raising)."""
    ubar, vbar = normalize_pixel(cam, u, v)
    ubar = np.atleast_1d(ubar)
    vbar = np.atleast_1d(vbar)
    ok = np.ones(ubar.shape, dtype=bool)

    if isinstance(cam.model, Pinhole):
        d = np.stack([ubar, vbar, np.ones_like(ubar)], axis=-1)
    else:
        rho = np.hypot(ubar, vbar)
        if isinstance(cam.model, EquidistantFisheye):
            theta = rho
        else:
            theta, ok = _solve_kb_theta(cam.model, rho)
        small = rho < _SMALL_RHO
        safe_rho = np.where(small, 1.0, rho)
        # sin(theta)/rho with the analytic rho -> 0 limit (theta -> rho there)
        factor = np.where(small, 1.0 - rho * rho / 6.0, np.sin(theta) / safe_rho)
        d = np.stack([ubar * factor, vbar * factor, np.cos(theta)], axis=-1)

    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return d, ok


def unproject_ray(cam: CalibratedCamera, u, v) -> np.ndarray:
    """Back-project pixels to unit bearing rays.

    Accepts scalars or arrays; returns shape (3,) for scalar input, (..., 3)
    otherwise. Raises NonConvergentError if any Kannala-Brandt inversion fails.
    """
    d, ok = _rays_and_mask(cam, u, v)
    if not ok.all():
        n_bad = int((~ok).sum())
        raise NonConvergentError(f"unprojection failed to converge for {n_bad} pixel(s)")
    if np.isscalar(u) or np.ndim(u) == 0:
        return d[0]
    return d


def project(cam: CalibratedCamera, p) -> tuple[np.ndarray, np.ndarray]:
    """Project 3D points (mm) to pixels. Inverse of unproject_ray up to scale."""
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    intr = cam.intrinsics
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]

    if isinstance(cam.model, Pinhole):
        if np.any(z <= 0):
            raise BehindCameraError("pinhole projection requires z > 0")
        u = intr.cx + intr.fx * x / z
        v = intr.cy + intr.fy * y / z
    else:
        norms = np.linalg.norm(pts, axis=-1)
        if np.any(norms == 0):
            raise ValueError("cannot project the origin")
        r_xy = np.hypot(x, y)
        theta = np.arctan2(r_xy, z)
        if isinstance(cam.model, EquidistantFisheye):
            rho = theta
        else:
            rho = cam.model.theta_d(theta)
        on_axis = r_xy < 1e-15
        scale = np.where(on_axis, 0.0, rho / np.where(on_axis, 1.0, r_xy))
        # directly behind the camera the azimuth is undefined; pick +x
        axis_u = np.where(theta > math.pi / 2, rho, 0.0)
        u = intr.cx + intr.fx * np.where(on_axis, axis_u, scale * x)
        v = intr.cy + intr.fy * np.where(on_axis, 0.0, scale * y)

    if np.asarray(p).ndim == 1:
        return float(u[0]), float(v[0])
    return u, v


def undistort_point(cam: CalibratedCamera, u, v):
    """Distortion correction: reproject the native ray through a pinhole with the same intrinsics.

    Identity for pinhole cameras. Raises RayAtHorizonError when the native ray
    has no forward component.
    """
    if isinstance(cam.model, Pinhole):
        return u, v
    d = unproject_ray(cam, u, v)
    d = np.atleast_2d(d)
    if np.any(d[..., 2] <= 0):
        raise RayAtHorizonError("ray points away from the image plane; no pinhole image")
    intr = cam.intrinsics
    uu = intr.cx + intr.fx * d[..., 0] / d[..., 2]
    vv = intr.cy + intr.fy * d[..., 1] / d[..., 2]
    if np.isscalar(u) or np.ndim(u) == 0:
        return float(uu[0]), float(vv[0])
    return uu, vv


def crop_to_image(box: CropBox, u_crop, v_crop, w_in: float, h_in: float):
    """Map crop-resolution coordinates back to full-image pixels (exact, extrapolates)."""
    if w_in <= 0 or h_in <= 0:
        raise ValueError("crop input resolution must be positive")
    u = box.x0 + (box.x1 - box.x0) * np.asarray(u_crop, dtype=float) / w_in
    v = box.y0 + (box.y1 - box.y0) * np.asarray(v_crop, dtype=float) / h_in
    if np.ndim(u_crop) == 0:
        return float(u), float(v)
    return u, v


DEFAULT_CAMGEO_DEPTHS = (200.0, 500.0, 1000.0)
DEFAULT_CAMGEO_GRID = 32


def camera_geometry_error(
    ref: CalibratedCamera,
    pert: CalibratedCamera,
    depths=DEFAULT_CAMGEO_DEPTHS,
    grid: int = DEFAULT_CAMGEO_GRID,
) -> float:
    """Mean metric displacement (mm) between the two cameras' viewing rays.

    For a uniform interior pixel grid, the angular difference alpha between
    matching rays is converted to a chord displacement 2 z sin(alpha/2) at
    each depth z; the result is the mean over grid pixels and depths. Pixels
    that fail to unproject under either model are skipped; more than 10%
    skipped raises DegenerateComparisonError.
    """
    ri, pi = ref.intrinsics, pert.intrinsics
    if (ri.width, ri.height) != (pi.width, pi.height):
        raise ValueError("cameras must share the image size")
    if grid < 2:
        raise ValueError("grid must be at least 2 pixels per side")

    us = (np.arange(grid) + 0.5) * ri.width / grid
    vs = (np.arange(grid) + 0.5) * ri.height / grid
    uu, vv = np.meshgrid(us, vs)
    uu, vv = uu.ravel(), vv.ravel()

    d_ref, ok_ref = _rays_and_mask(ref, uu, vv)
    d_pert, ok_pert = _rays_and_mask(pert, uu, vv)
    ok = ok_ref & ok_pert
    if (~ok).sum() >= 0.1 * ok.size:
        raise DegenerateComparisonError(
            f"{int((~ok).sum())}/{ok.size} grid pixels failed to unproject"
        )

    a, b = d_ref[ok], d_pert[ok]
    alpha = np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))
    chords = 2.0 * np.sin(0.5 * alpha)
    return float(np.mean(chords[:, None] * np.asarray(depths, dtype=float)[None, :]))


_MODEL_TAGS = {"pinhole": Pinhole, "equidistant": EquidistantFisheye, "kannala_brandt": KannalaBrandt}


def camera_from_json(obj: dict) -> CalibratedCamera:
    """Build a camera from the calibration JSON schema.

    Schema: {"model": "pinhole"|"equidistant"|"kannala_brandt",
             "fx", "fy", "cx", "cy", "width", "height", "coeffs": [k1,k2,k3,k4]?}
    """
    if not isinstance(obj, dict):
        raise SchemaError("camera calibration must be a JSON object")
    try:
        tag = obj["model"]
        intr = Intrinsics(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )
    except KeyError as exc:
        raise SchemaError(f"camera calibration missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad camera calibration: {exc}") from exc
    if tag not in _MODEL_TAGS:
        raise SchemaError(f"unknown camera model {tag!r}")
    if tag == "kannala_brandt":
        coeffs = obj.get("coeffs")
        if not isinstance(coeffs, (list, tuple)) or len(coeffs) != 4:
            raise SchemaError("kannala_brandt requires coeffs [k1, k2, k3, k4]")
        model: ProjectionModel = KannalaBrandt(*(float(c) for c in coeffs))
    else:
        model = _MODEL_TAGS[tag]()
    try:
        return CalibratedCamera(intr, model)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def camera_to_json(cam: CalibratedCamera) -> dict:
    intr = cam.intrinsics
    obj = {
        "model": next(tag for tag, cls in _MODEL_TAGS.items() if isinstance(cam.model, cls)),
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "width": intr.width,
        "height": intr.height,
    }
    if isinstance(cam.model, KannalaBrandt):
        obj["coeffs"] = [cam.model.k1, cam.model.k2, cam.model.k3, cam.model.k4]
    return obj


def load_camera(path) -> CalibratedCamera:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return camera_from_json(obj)
