import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from joblib import Parallel, delayed

from src.cohort.schemas import KneeRecord
from src.imaging.io import load_prepared, load_raw_image, prepared_stem, read_landmarks, save_prepared
from src.imaging.normalize import normalize_image
from src.imaging.roi import extract_roi
from src.imaging.schemas import PreparedImage

logger = logging.getLogger(__name__)


def prepare_record(record: KneeRecord, default_spacing: float) -> PreparedImage:
    spacing = record.pixel_spacing or default_spacing
    raw = load_raw_image(record.image_ref, spacing)
    landmarks = read_landmarks(record.landmarks_ref)
    return normalize_image(extract_roi(raw, landmarks, record.side))


def _prepare_and_save(record: KneeRecord, out_dir: Path, default_spacing: float) -> Path:
    return save_prepared(prepare_record(record, default_spacing), out_dir, record.subject_id)


def preprocess_records(
    records: Sequence[KneeRecord],
    out_dir: Path,
    default_spacing: float,
    n_jobs: int = 1,
) -> List[Path]:
    """ROI extraction and normalization for every knee; one PNG + sidecar each."""
    paths = Parallel(n_jobs=n_jobs)(
        delayed(_prepare_and_save)(record, out_dir, default_spacing) for record in records
    )
    logger.info(f"Prepared {len(paths)} knee images into {out_dir}")
    return paths


def load_prepared_images(records: Sequence[KneeRecord], prepared_dir: Path) -> Dict[Tuple[str, str], PreparedImage]:
    prepared_dir = Path(prepared_dir)
    images = {}
    for record in records:
        png = prepared_dir / f"{prepared_stem(record.subject_id, record.side)}.png"
        if not png.exists():
            raise FileNotFoundError(f"prepared image missing for knee {record.key}: {png}")
        images[record.key] = load_prepared(png)
    return images
