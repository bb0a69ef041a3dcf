import numpy as np
from skimage.transform import resize

from src.cohort.schemas import Side
from src.imaging.schemas import PREPARED_SIZE, PREPARED_SPACING_MM, PreparedImage, RoiImage

CLIP_PERCENTILES = (5.0, 99.0)


def normalize_intensity(pixels: np.ndarray) -> np.ndarray:
    """Clip to [p5, p99] and stretch to [0, 255]; a constant image maps to zeros."""
    pixels = np.asarray(pixels, dtype=np.float64)
    low, high = np.percentile(pixels, CLIP_PERCENTILES)
    if high <= low:
        return np.zeros_like(pixels)
    clipped = np.clip(pixels, low, high)
    clipped -= clipped.min()
    return clipped / clipped.max() * 255.0


def normalize_image(roi: RoiImage) -> PreparedImage:
    scaled = normalize_intensity(roi.pixels)
    if scaled.shape != (PREPARED_SIZE, PREPARED_SIZE):
        scaled = resize(
            scaled,
            (PREPARED_SIZE, PREPARED_SIZE),
            order=1,
            mode="edge",
            anti_aliasing=False,
            preserve_range=True,
        )
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    flipped = roi.side == Side.LEFT
    if flipped:
        pixels = np.ascontiguousarray(np.fliplr(pixels))
    return PreparedImage(
        pixels=pixels,
        side=roi.side,
        flipped=flipped,
        pixel_spacing=PREPARED_SPACING_MM,
    )
