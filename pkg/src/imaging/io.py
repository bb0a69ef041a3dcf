import logging
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import orjson
from PIL import Image

from src.cohort.schemas import Side
from src.imaging.schemas import LandmarkSet, PreparedImage, RawImage

logger = logging.getLogger(__name__)


def read_landmarks(path: Path) -> LandmarkSet:
    """Plain text, one 'name x y' per line."""
    points: Dict[str, Tuple[float, float]] = {}
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{number}: expected 'name x y', got {line!r}")
        points[parts[0]] = (float(parts[1]), float(parts[2]))
    return LandmarkSet(points=points)


def write_landmarks(lm: LandmarkSet, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{name} {x:.3f} {y:.3f}\n" for name, (x, y) in lm.points.items()))
    return path


def load_raw_image(path: Path, pixel_spacing: float) -> RawImage:
    path = Path(path)
    if path.suffix == ".npy":
        pixels = np.load(path)
    else:
        with Image.open(path) as handle:
            pixels = np.asarray(handle)
    return RawImage(pixels=pixels.astype(np.float64), pixel_spacing=pixel_spacing)


def save_raw_image(pixels: np.ndarray, path: Path) -> Path:
    """16-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(np.rint(pixels), 0, 65535).astype(np.uint16)).save(path)
    return path


def prepared_stem(subject_id: str, side: Side) -> str:
    return f"{subject_id}_{Side(side).code}"


def save_prepared(img: PreparedImage, out_dir: Path, subject_id: str) -> Path:
    """Lossless 8-bit PNG plus a JSON sidecar holding flip and spacing."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = prepared_stem(subject_id, img.side)
    png = out_dir / f"{stem}.png"
    Image.fromarray(img.pixels).save(png)
    sidecar = {
        "subject_id": subject_id,
        "side": img.side.value,
        "flipped": img.flipped,
        "pixel_spacing": img.pixel_spacing,
    }
    (out_dir / f"{stem}.json").write_bytes(orjson.dumps(sidecar, option=orjson.OPT_SORT_KEYS))
    return png


def load_prepared(png: Path) -> PreparedImage:
    png = Path(png)
    sidecar = orjson.loads(png.with_suffix(".json").read_bytes())
    with Image.open(png) as handle:
        pixels = np.asarray(handle.convert("L"), dtype=np.uint8).copy()
    return PreparedImage(
        pixels=pixels,
        side=Side(sidecar["side"]),
        flipped=sidecar["flipped"],
        pixel_spacing=sidecar["pixel_spacing"],
    )
