"""
Desk-scale synthetic cohorts with a planted progression signal.

Each knee gets two latent signals, each N(effect * progressed, 1):
the medial joint gap narrows with the first and an osteophyte-like square
next to the medial plateau brightens with the second. A detector that sees
both perfectly reaches AUC = Phi(sqrt(gap_effect^2 + blob_effect^2) / sqrt(2)).

Geometry is described in a canonical right-knee frame in millimetres:
u runs along the tibial plateau (medial side negative), v points from the
femur towards the tibia, and the origin is the joint center. Left knees are
mirrored in u before rendering, so preprocessing (which flips left knees)
brings every knee back to the canonical frame.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import orjson
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from src.cohort.metadata import OPTIONAL_COLUMNS, REQUIRED_COLUMNS
from src.core.config import SynthConfig
from src.imaging.io import save_raw_image, write_landmarks
from src.imaging.schemas import PREPARED_SIZE, ROI_SIZE_MM, LandmarkSet

logger = logging.getLogger(__name__)

RAW_SPACING_MM = 0.35
RAW_SIZE = 480
PARAMS_FILE = "synth_params.json"

TRAIN_VISITS = (0, 12, 24, 36, 48, 72, 96)
TEST_VISITS = (0, 15, 30, 60, 84)

LATERAL_GAP_MM = 5.0
MEDIAL_GAP_MM = 5.0
GAP_SD_MM = 0.6
BLOB_CENTER_MM = (-38.0, -2.0)
BLOB_HALF_MM = 9.0
BLOB_BASE = 400.0
BLOB_SD = 200.0
PLATEAU_HALF_WIDTH_MM = 40.0
MAX_TILT_DEG = 4.0

KL_PROBS = {
    False: (0.33, 0.25, 0.25, 0.14, 0.03),
    True: (0.08, 0.20, 0.34, 0.35, 0.03),
}


def bayes_auc(gap_effect: float, blob_effect: float) -> float:
    return float(norm.cdf(np.hypot(gap_effect, blob_effect) / np.sqrt(2.0)))


def blob_box_prepared() -> Tuple[int, int, int, int]:
    """(row_start, row_stop, col_start, col_stop) of the planted square in prepared-image pixels."""
    scale = PREPARED_SIZE / ROI_SIZE_MM
    center = (PREPARED_SIZE - 1) / 2.0
    u, v = BLOB_CENTER_MM
    col0 = int(np.floor(center + (u - BLOB_HALF_MM) * scale))
    col1 = int(np.ceil(center + (u + BLOB_HALF_MM) * scale)) + 1
    row0 = int(np.floor(center + (v - BLOB_HALF_MM) * scale))
    row1 = int(np.ceil(center + (v + BLOB_HALF_MM) * scale)) + 1
    return row0, row1, col0, col1


def render_knee(
    medial_gap_mm: float,
    blob_amplitude: float,
    tilt_deg: float,
    center_px: Tuple[float, float],
    mirrored: bool,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, LandmarkSet]:
    theta = np.deg2rad(tilt_deg)
    e = np.array([np.cos(theta), np.sin(theta)])
    n = np.array([-np.sin(theta), np.cos(theta)])
    sign = -1.0 if mirrored else 1.0

    ys, xs = np.mgrid[0:RAW_SIZE, 0:RAW_SIZE].astype(np.float64)
    dx = (xs - center_px[0]) * RAW_SPACING_MM
    dy = (ys - center_px[1]) * RAW_SPACING_MM
    u = sign * (dx * e[0] + dy * e[1])
    v = dx * n[0] + dy * n[1]

    # joint space narrows smoothly from the lateral to the medial compartment
    gap = LATERAL_GAP_MM + (medial_gap_mm - LATERAL_GAP_MM) * expit(-u / 3.0)
    femur = (v <= -gap / 2) & (np.abs(u) <= PLATEAU_HALF_WIDTH_MM - 0.8 * np.maximum(0.0, -v - 25.0))
    tibia = (v >= gap / 2) & (np.abs(u) <= PLATEAU_HALF_WIDTH_MM - 0.8 * np.maximum(0.0, v - 20.0))
    blob = (np.abs(u - BLOB_CENTER_MM[0]) <= BLOB_HALF_MM) & (np.abs(v - BLOB_CENTER_MM[1]) <= BLOB_HALF_MM)

    pixels = np.where(np.abs(u) <= 60.0, 1500.0, 400.0)
    pixels = pixels + 1500.0 * (femur | tibia)
    pixels = pixels + blob_amplitude * blob
    pixels = pixels + rng.normal(0.0, 60.0, size=pixels.shape)

    def to_image(point_u: float, point_v: float) -> Tuple[float, float]:
        offset = (sign * point_u * e + point_v * n) / RAW_SPACING_MM
        return float(center_px[0] + offset[0]), float(center_px[1] + offset[1])

    landmarks = LandmarkSet(points={
        "tibial_plateau_left": to_image(-PLATEAU_HALF_WIDTH_MM, 0.0),
        "tibial_plateau_right": to_image(PLATEAU_HALF_WIDTH_MM, 0.0),
        "femur_medial": to_image(-20.0, -15.0),
        "femur_lateral": to_image(20.0, -15.0),
    })
    return np.clip(pixels, 0.0, None), landmarks


def _visit_grades(
    visits: Tuple[int, ...],
    kl0: Optional[int],
    event_month: Optional[int],
    tkr: bool,
    dropout: bool,
    rng: np.random.Generator,
) -> List[Dict]:
    rows = []
    for month in visits:
        row = {"visit_month": month, "kl": kl0, "tkr": 0, "examined": 1}
        if kl0 is not None and month > 0:
            if event_month is not None and month >= event_month:
                if tkr:
                    row.update(kl=None, tkr=1)
                else:
                    row["kl"] = 2 if kl0 == 0 else min(kl0 + 1, 4)
            elif kl0 == 0 and rng.random() < 0.2:
                # 0 -> 1 drift is not progression
                row["kl"] = 1
        if dropout and month == visits[-1]:
            row.update(kl=None, examined=0)
        rows.append(row)
    return rows


def _maybe(value, missing_rate: float, rng: np.random.Generator):
    return None if rng.random() < missing_rate else value


def generate_cohort(
    role: str,
    n_subjects: int,
    cfg: SynthConfig,
    data_dir: Path,
    rng: np.random.Generator,
) -> pd.DataFrame:
    visits = TRAIN_VISITS if role == "train" else TEST_VISITS
    fast_months = [m for m in visits if 0 < m <= 60]
    slow_months = [m for m in visits if m > 60]
    rows = []
    for s in range(n_subjects):
        subject_id = f"{role[:2].upper()}{s:05d}"
        sides = ["L", "R"] if rng.random() < 0.9 else [str(rng.choice(["L", "R"]))]
        age = float(np.round(rng.normal(62.0, 8.0), 1))
        sex = str(rng.choice(["F", "M"]))
        bmi = float(np.round(rng.normal(28.5, 4.5), 1))
        died = role == "test" and rng.random() < 0.02

        for side in sides:
            progressed = bool(rng.random() < cfg.progression_rate)
            kl0 = int(rng.choice(5, p=KL_PROBS[progressed]))
            if rng.random() < 0.01:
                kl0 = None
            event_month, tkr = None, False
            if progressed:
                months = fast_months if rng.random() < 0.6 or not slow_months else slow_months
                event_month = int(rng.choice(months))
                tkr = kl0 == 3 and rng.random() < 0.3
            dropout = not progressed and rng.random() < cfg.missing_rate

            gap_signal = rng.normal(cfg.gap_effect * progressed, 1.0)
            blob_signal = rng.normal(cfg.blob_effect * progressed, 1.0)
            pixels, landmarks = render_knee(
                medial_gap_mm=MEDIAL_GAP_MM - GAP_SD_MM * gap_signal,
                blob_amplitude=BLOB_BASE + BLOB_SD * blob_signal,
                tilt_deg=rng.uniform(-MAX_TILT_DEG, MAX_TILT_DEG),
                center_px=(RAW_SIZE / 2 + rng.uniform(-10, 10), RAW_SIZE / 2 + rng.uniform(-10, 10)),
                mirrored=side == "L",
                rng=rng,
            )
            image_rel = Path("images") / role / f"{subject_id}_{side}.png"
            landmarks_rel = Path("landmarks") / role / f"{subject_id}_{side}.txt"
            save_raw_image(pixels, data_dir / image_rel)
            write_landmarks(landmarks, data_dir / landmarks_rel)

            clinical = {
                "age": _maybe(age, cfg.missing_rate / 4, rng),
                "sex": sex,
                "bmi": _maybe(float(np.round(bmi + 0.8 * progressed, 1)), cfg.missing_rate, rng),
                "injury": _maybe(int(rng.random() < 0.2 + 0.1 * progressed), cfg.missing_rate, rng),
                "surgery": _maybe(int(rng.random() < 0.1 + 0.05 * progressed), cfg.missing_rate, rng),
                "womac": _maybe(float(np.round(max(0.0, rng.normal(18.0 + 5.0 * progressed, 12.0)), 1)), cfg.missing_rate, rng),
            }
            for visit in _visit_grades(visits, kl0, event_month, tkr, dropout, rng):
                rows.append({
                    "subject_id": subject_id,
                    "side": side,
                    **visit,
                    "died": int(died),
                    **clinical,
                    "image_path": image_rel.as_posix(),
                    "landmarks_path": landmarks_rel.as_posix(),
                    "beam_angle": 10,
                    "pixel_spacing": RAW_SPACING_MM,
                })
    frame = pd.DataFrame(rows, columns=list(REQUIRED_COLUMNS) + list(OPTIONAL_COLUMNS))
    return frame.astype(object).where(frame.notna(), "")


def generate_dataset(cfg: SynthConfig, data_dir: Path, seed: int = 0) -> Dict:
    """Write train/test metadata, raw images and landmarks; returns the generator parameters."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for role, n_subjects in (("train", cfg.n_train_subjects), ("test", cfg.n_test_subjects)):
        frame = generate_cohort(role, n_subjects, cfg, data_dir, rng)
        frame.to_csv(data_dir / f"{role}_metadata.csv", index=False)
        logger.info(f"Synthesized {frame['subject_id'].nunique()} {role} subjects into {data_dir}")

    params = {
        "seed": seed,
        "raw_spacing_mm": RAW_SPACING_MM,
        "raw_size": RAW_SIZE,
        "gap_effect": cfg.gap_effect,
        "blob_effect": cfg.blob_effect,
        "gap_sd_mm": GAP_SD_MM,
        "blob_sd": BLOB_SD,
        "blob_box_prepared": list(blob_box_prepared()),
        "bayes_auc": bayes_auc(cfg.gap_effect, cfg.blob_effect),
        "progression_rate": cfg.progression_rate,
        "missing_rate": cfg.missing_rate,
        "train_visits": list(TRAIN_VISITS),
        "test_visits": list(TEST_VISITS),
    }
    (data_dir / PARAMS_FILE).write_bytes(orjson.dumps(params, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
    return params
