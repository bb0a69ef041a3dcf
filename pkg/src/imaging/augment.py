from typing import List, Tuple, Union

import numpy as np
from scipy import ndimage

from src.core.errors import ImageSizeError
from src.imaging.schemas import CROP_SIZE, AugmentationParams, PreparedImage

Grid = Union[np.ndarray, PreparedImage]


def _pixels(img: Grid) -> np.ndarray:
    return img.pixels if isinstance(img, PreparedImage) else np.asarray(img)


def sample_crop_offset(shape: Tuple[int, int], crop: int, rng: np.random.Generator) -> Tuple[int, int]:
    height, width = shape
    if height < crop or width < crop:
        raise ImageSizeError(f"cannot crop {crop}x{crop} from {height}x{width}")
    return int(rng.integers(0, height - crop + 1)), int(rng.integers(0, width - crop + 1))


def augment(img: Grid, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    """Noise, rotation, random crop, gamma; in that order. Returns a float32 crop in [0, 255]."""
    x = _pixels(img).astype(np.float64)

    if params.noise_sigma > 0:
        x = x + rng.uniform(-params.noise_sigma, params.noise_sigma, size=x.shape)

    angle = rng.uniform(-params.rotation_range, params.rotation_range) if params.rotation_range > 0 else 0.0
    if angle != 0.0:
        x = ndimage.rotate(x, angle, reshape=False, order=1, mode="constant", cval=0.0)

    if params.fixed_crop_offset is not None:
        top, left = params.fixed_crop_offset
        if top + params.crop_size > x.shape[0] or left + params.crop_size > x.shape[1]:
            raise ImageSizeError(f"fixed crop offset {params.fixed_crop_offset} exceeds {x.shape}")
    else:
        top, left = sample_crop_offset(x.shape, params.crop_size, rng)
    x = x[top:top + params.crop_size, left:left + params.crop_size]

    lo, hi = params.gamma_range
    gamma = lo if lo == hi else rng.uniform(lo, hi)
    x = np.clip(x, 0.0, 255.0)
    if gamma != 1.0:
        x = 255.0 * (x / 255.0) ** gamma
    return x.astype(np.float32)


def five_crop_offsets(shape: Tuple[int, int], crop: int = CROP_SIZE) -> List[Tuple[int, int]]:
    """Top-left corners in TL, TR, BL, BR, C order."""
    height, width = shape
    if height < crop or width < crop:
        raise ImageSizeError(f"five-crop needs at least {crop}x{crop}, got {height}x{width}")
    dy, dx = height - crop, width - crop
    return [(0, 0), (0, dx), (dy, 0), (dy, dx), (dy // 2, dx // 2)]


def five_crop(img: Grid, crop: int = CROP_SIZE) -> List[np.ndarray]:
    pixels = _pixels(img)
    if pixels.ndim != 2:
        raise ImageSizeError(f"expected a 2-D image, got shape {pixels.shape}")
    return [
        pixels[top:top + crop, left:left + crop]
        for top, left in five_crop_offsets(pixels.shape, crop)
    ]


def center_crop(img: Grid, crop: int = CROP_SIZE) -> np.ndarray:
    return five_crop(img, crop)[4]
