"""Synthetic patients and ROI images for exercising the whole pipeline.

Each patient gets a latent fibrosis score ``f ~ U[0, 1]``. Kidney function
falls with ``f``; the ROI shows ``round(f * max_blobs)`` dark elliptical
blobs on a near-white field, so the image carries the signal. ROIs are
horizontal strips sized so that 50%-overlap chipping with a ``chip_px``
window yields exactly ``chips_per_patient`` windows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from ..chipper import PatientRecord, RoiRecord, Stain, write_patients, write_rois
from ..imgcore import Image, save_image
from ..rng import stream


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 40
    chips_per_patient: int = 8
    chip_px: int = 320
    seed: int = 0
    noise_egfr_sd: float = 5.0
    max_blobs: int = 200
    blob_radius_min: float = 10.0
    blob_radius_max: float = 20.0
    blob_color: str = "110,50,120"
    ablate_signal: bool = False

    def __post_init__(self):
        if min(self.n_patients, self.chips_per_patient, self.chip_px) < 1:
            raise ValueError("n_patients, chips_per_patient and chip_px must be >= 1")
        if self.chip_px % 2:
            raise ValueError("chip_px must be even for a 50% overlap stride")
        if self.noise_egfr_sd < 0 or self.max_blobs < 0:
            raise ValueError("noise_egfr_sd and max_blobs must be >= 0")
        if not 0 < self.blob_radius_min <= self.blob_radius_max:
            raise ValueError("need 0 < blob_radius_min <= blob_radius_max")
        self.color()

    def color(self) -> np.ndarray:
        rgb = [int(c) for c in self.blob_color.split(",")]
        if len(rgb) != 3 or not all(0 <= c <= 255 for c in rgb):
            raise ValueError(f"blob_color must be 'R,G,B', got {self.blob_color!r}")
        return np.array(rgb, dtype=np.int64)

    @property
    def roi_shape(self):
        """(height, width) of each patient's ROI strip."""
        return self.chip_px, self.chip_px * (self.chips_per_patient + 1) // 2


class SynthOutput(NamedTuple):
    patients_csv: Path
    rois_csv: Path
    roi_dir: Path


def draw_patient(cfg: SynthConfig, index: int):
    """(fibrosis, egfr_12mo, baseline_egfr, blob_count) for patient ``index``."""
    rng = stream(cfg.seed, "patient", index)
    f = rng.uniform(0.0, 1.0)
    sd = cfg.noise_egfr_sd
    egfr_12 = float(np.clip(110.0 - 90.0 * f + rng.normal(0.0, sd), 5.0, 150.0))
    baseline = float(np.clip(egfr_12 + rng.normal(0.0, 2 * sd), 5.0, 150.0))
    if cfg.ablate_signal:
        n_blobs = int(rng.integers(0, cfg.max_blobs + 1))
    else:
        n_blobs = int(round(f * cfg.max_blobs))
    return float(f), round(egfr_12, 3), round(baseline, 3), n_blobs


def render_roi(cfg: SynthConfig, n_blobs: int, rng: np.random.Generator) -> Image:
    h, w = cfg.roi_shape
    px = 255 - rng.integers(0, 8, size=(h, w, 3))
    base = cfg.color()
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        a = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max)
        b = a * rng.uniform(0.6, 1.0)
        theta = rng.uniform(0, math.pi)
        color = np.clip(base + rng.integers(-20, 21, size=3), 0, 255)
        x0, x1 = max(int(cx - a) - 1, 0), min(int(cx + a) + 2, w)
        y0, y1 = max(int(cy - a) - 1, 0), min(int(cy + a) + 2, h)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        dx, dy = xs - cx, ys - cy
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        px[y0:y1, x0:x1][inside] = color
    return Image(px.astype(np.uint8))


def synth_generate(cfg: SynthConfig, out_dir: Union[str, Path]) -> SynthOutput:
    out_dir = Path(out_dir)
    roi_dir = out_dir / "rois"
    roi_dir.mkdir(parents=True, exist_ok=True)
    patients, rois = [], []
    width = len(str(cfg.n_patients - 1))
    for i in range(cfg.n_patients):
        pid = f"P{i:0{max(width, 3)}d}"
        _, egfr_12, baseline, n_blobs = draw_patient(cfg, i)
        patients.append(PatientRecord(pid, baseline, egfr_12))
        roi_path = roi_dir / f"{pid}_roi0.png"
        save_image(render_roi(cfg, n_blobs, stream(cfg.seed, "roi", i)), roi_path)
        stain = Stain.TRI if i % 2 == 0 else Stain.PASD
        rois.append(RoiRecord(roi_path, pid, f"S{pid[1:]}", stain))
    patients_csv = out_dir / "patients.csv"
    rois_csv = out_dir / "rois.csv"
    write_patients(patients, patients_csv)
    write_rois(rois, rois_csv)
    return SynthOutput(patients_csv, rois_csv, roi_dir)
