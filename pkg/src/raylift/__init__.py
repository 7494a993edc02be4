"""raylift: camera-space hand-forearm lifting and forearm-mesh toolkit."""

from .camera import (
    CalibratedCamera,
    CropBox,
    EquidistantFisheye,
    Intrinsics,
    KannalaBrandt,
    Pinhole,
    camera_from_json,
    camera_geometry_error,
    camera_to_json,
    crop_to_image,
    load_camera,
    normalize_pixel,
    project,
    undistort_point,
    unproject_ray,
)

__all__ = [
    "CalibratedCamera",
    "CropBox",
    "EquidistantFisheye",
    "Intrinsics",
    "KannalaBrandt",
    "Pinhole",
    "camera_from_json",
    "camera_geometry_error",
    "camera_to_json",
    "crop_to_image",
    "load_camera",
    "normalize_pixel",
    "project",
    "undistort_point",
    "unproject_ray",
]

__version__ = "0.1.0"
