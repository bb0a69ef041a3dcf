from typing import Tuple

import numpy as np
from scipy import ndimage

from src.cohort.schemas import Side
from src.core.errors import GeometryError
from src.imaging.schemas import ROI_SIZE_MM, LandmarkSet, RawImage, RoiImage


def plateau_frame(lm: LandmarkSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Joint center plus the ROI axes expressed in input (x, y) pixel coordinates.

    The x axis runs along the tibial plateau. Its sign is chosen so the femur
    ends up above the plateau, which makes the frame invariant to 180 degree
    rotations of the input.
    """
    a, b = lm.plateau_endpoints()
    direction = b - a
    length = float(np.hypot(*direction))
    if length < 1e-6:
        raise GeometryError("tibial plateau endpoints coincide")
    e = direction / length
    n = np.array([-e[1], e[0]])
    center = (a + b) / 2.0

    femur = lm.femur_points()
    if len(femur):
        flip = float(np.dot(femur.mean(axis=0) - center, n)) > 0
    else:
        flip = e[0] < 0
    if flip:
        e, n = -e, -n
    return center, e, n


def extract_roi(img: RawImage, lm: LandmarkSet, side: Side, roi_mm: float = ROI_SIZE_MM) -> RoiImage:
    """Rotate so the plateau is horizontal and crop a roi_mm square around the joint center."""
    height, width = img.pixels.shape
    for name, (x, y) in lm.points.items():
        if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
            raise GeometryError(f"landmark '{name}' at ({x}, {y}) lies outside the {width}x{height} image")

    center, e, n = plateau_frame(lm)
    size = int(round(roi_mm / img.pixel_spacing))
    half = (size - 1) / 2.0

    # output (row, col) -> input (row, col); areas outside the image are zero-padded
    matrix = np.array([[n[1], e[1]], [n[0], e[0]]])
    offset = np.array([
        center[1] - half * (n[1] + e[1]),
        center[0] - half * (n[0] + e[0]),
    ])
    pixels = ndimage.affine_transform(
        img.pixels.astype(np.float64),
        matrix,
        offset=offset,
        output_shape=(size, size),
        order=1,
        mode="constant",
        cval=0.0,
    )

    mapped = {}
    for name, point in lm.points.items():
        rel = np.asarray(point, dtype=np.float64) - center
        mapped[name] = (float(rel @ e + half), float(rel @ n + half))

    return RoiImage(
        pixels=pixels,
        side=Side(side),
        pixel_spacing=img.pixel_spacing,
        physical_size_mm=size * img.pixel_spacing,
        landmarks=mapped,
    )
