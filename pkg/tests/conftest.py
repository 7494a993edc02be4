import numpy as np
import pytest

from raylift.camera import (
    CalibratedCamera,
    EquidistantFisheye,
    Intrinsics,
    KannalaBrandt,
    Pinhole,
)


@pytest.fixture
def pinhole_cam() -> CalibratedCamera:
    return CalibratedCamera(Intrinsics(600.0, 600.0, 320.0, 240.0, 640, 480), Pinhole())


@pytest.fixture
def fisheye_cam() -> CalibratedCamera:
    return CalibratedCamera(Intrinsics(600.0, 600.0, 320.0, 240.0, 640, 480), EquidistantFisheye())


@pytest.fixture
def kb_cam() -> CalibratedCamera:
    # mild radial polynomial, monotone over the full frame
    return CalibratedCamera(
        Intrinsics(600.0, 600.0, 320.0, 240.0, 640, 480),
        KannalaBrandt(0.05, -0.01, 0.002, -0.0001),
    )


@pytest.fixture(params=["pinhole", "equidistant", "kannala_brandt"])
def any_cam(request, pinhole_cam, fisheye_cam, kb_cam) -> CalibratedCamera:
    return {"pinhole": pinhole_cam, "equidistant": fisheye_cam, "kannala_brandt": kb_cam}[
        request.param
    ]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_axis(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)
