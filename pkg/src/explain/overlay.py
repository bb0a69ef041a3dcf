import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from src.cohort.schemas import KneeRecord
from src.explain.gradcam import AttentionMap, Normalization, gradcam_tta
from src.imaging.io import prepared_stem
from src.imaging.schemas import PreparedImage
from src.nnmodel.snapshots import FoldModel

logger = logging.getLogger(__name__)


def save_overlay(img: PreparedImage, amap: AttentionMap, out_dir: Path, subject_id: str) -> Tuple[Path, Path]:
    """Heat overlay `{subject_id}_{side}_gcam.png` plus the raw map as `.npy`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{prepared_stem(subject_id, img.side)}_gcam"

    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.imshow(img.pixels, cmap="gray", vmin=0, vmax=255)
    ax.imshow(amap.values, cmap="jet", alpha=0.4, vmin=0.0, vmax=max(float(amap.values.max()), 1e-12))
    ax.set_axis_off()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, bbox_inches="tight", pad_inches=0)
    plt.close(fig)

    npy = out_dir / f"{stem}.npy"
    np.save(npy, amap.values)
    return png, npy


def explain_knees(
    fold_models: Sequence[FoldModel],
    records: Sequence[KneeRecord],
    images: Dict[Tuple[str, str], PreparedImage],
    out_dir: Path,
    normalization: Normalization = "unit-max",
) -> List[Path]:
    written = []
    for record in records:
        img = images[record.key]
        amap = gradcam_tta(fold_models, img, normalization)
        png, _ = save_overlay(img, amap, out_dir, record.subject_id)
        written.append(png)
    logger.info(f"Wrote {len(written)} attention overlays to {out_dir}")
    return written
