"""Crop intrinsics features: 16 geometric scalars and their 128-dim encoding.

A crop's geometric context is summarized by the viewing directions at its
undistorted center and corners plus six scale-normalized intrinsics, then
expanded with a sinusoidal positional encoding. Pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CalibratedCamera, CropBox, Pinhole, undistort_point
from .errors import ZeroAreaCropError

ENCODING_BANDS = 4  # 16 scalars * 4 bands * (sin, cos) = 128
ENCODING_BASE = 10000.0


@dataclass(frozen=True)
class CropIntrinsics:
    """Viewing directions at the crop center/corners plus scale-normalized intrinsics.

    Angles are radians; the principal-point offsets and log size ratios are
    dimensionless. `as_vector` flattens to the canonical 16-scalar layout.
    """

    center_dir: tuple  # (theta_u, theta_v) at the undistorted crop midpoint
    corner_dirs: tuple  # four (theta_u, theta_v) pairs: (x0,y0), (x0,y1), (x1,y0), (x1,y1)
    offset_x: float
    offset_y: float
    log_ratio_w: float
    log_ratio_h: float
    half_fov_x: float
    half_fov_y: float

    def as_vector(self) -> np.ndarray:
        flat = list(self.center_dir)
        for pair in self.corner_dirs:
            flat.extend(pair)
        flat += [
            self.offset_x,
            self.offset_y,
            self.log_ratio_w,
            self.log_ratio_h,
            self.half_fov_x,
            self.half_fov_y,
        ]
        return np.array(flat, dtype=float)


def viewing_direction(cam: CalibratedCamera, u, v) -> tuple[float, float]:
    """Angular offsets of the pixel's pinhole ray from the optical axis."""
    intr = cam.intrinsics
    return (
        float(np.arctan((u - intr.cx) / intr.fx)),
        float(np.arctan((v - intr.cy) / intr.fy)),
    )


def crop_intrinsics(cam: CalibratedCamera, box: CropBox) -> CropIntrinsics:
    """Geometric context of a crop: undistorted directions and normalized sizes.

    The midpoint and the four corners are undistorted through the camera's
    native model first (identity for pinhole); the undistorted width/height
    come from the corner pair differences.
    """
    intr = cam.intrinsics
    xc, yc = box.center
    uc, vc = undistort_point(cam, xc, yc)
    corners_px = [(box.x0, box.y0), (box.x0, box.y1), (box.x1, box.y0), (box.x1, box.y1)]
    und = [undistort_point(cam, x, y) for x, y in corners_px]
    width = und[3][0] - und[0][0]
    height = und[3][1] - und[0][1]
    if width <= 0 or height <= 0:
        raise ZeroAreaCropError(f"undistorted crop has non-positive size {width}x{height}")
    return CropIntrinsics(
        center_dir=viewing_direction(cam, uc, vc),
        corner_dirs=tuple(viewing_direction(cam, u, v) for u, v in und),
        offset_x=(intr.cx - uc) / width,
        offset_y=(intr.cy - vc) / height,
        log_ratio_w=math.log(width / intr.width),
        log_ratio_h=math.log(height / intr.height),
        half_fov_x=math.atan(intr.width / (2.0 * intr.fx)),
        half_fov_y=math.atan(intr.height / (2.0 * intr.fy)),
    )


def sinusoidal_encode(ci) -> np.ndarray:
    """Map the 16 crop scalars to 128 bounded features.

    Per scalar x and band k in {0..3}: sin(x * w_k), cos(x * w_k) with
    w_k = 10000^(-k/4); layout is scalar-major, band-minor, sin before cos.
    """
    vec = ci.as_vector() if isinstance(ci, CropIntrinsics) else np.asarray(ci, dtype=float)
    if not np.all(np.isfinite(vec)):
        raise ValueError("crop intrinsics must be finite")
    freqs = ENCODING_BASE ** (-np.arange(ENCODING_BANDS) / ENCODING_BANDS)
    phases = vec[:, None] * freqs[None, :]  # (16, 4)
    out = np.empty((vec.size, ENCODING_BANDS, 2))
    out[:, :, 0] = np.sin(phases)
    out[:, :, 1] = np.cos(phases)
    return out.reshape(-1)
