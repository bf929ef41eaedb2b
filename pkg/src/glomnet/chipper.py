"""ROI ingest and sliding-window chipping into an on-disk chip database."""
from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from .imgcore import Image, ImageError, crop, downsample, load_image, save_image

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

ROI_COLUMNS = ("roi_path", "patient_id", "slide_id", "stain")
PATIENT_COLUMNS = ("patient_id", "baseline_egfr", "egfr_12mo")
MANIFEST_COLUMNS = ("chip_path", "patient_id", "slide_id", "roi_id", "offset_x", "offset_y",
                    "stain", "baseline_egfr", "egfr_12mo")


class DataError(ValueError):
    """Bad or inconsistent input data (maps to CLI exit code 2)."""


class Stain(str, enum.Enum):
    TRI = "TRI"
    PASD = "PASD"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, text: str) -> "Stain":
        key = text.strip().upper().replace("-", "").replace("_", "")
        return cls.__members__.get(key, cls.OTHER)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    baseline_egfr: float
    egfr_12mo: float

    def __post_init__(self):
        if not self.patient_id:
            raise DataError("empty patient_id")
        for name in ("baseline_egfr", "egfr_12mo"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"{self.patient_id}: {name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class RoiRecord:
    roi_path: Path
    patient_id: str
    slide_id: str
    stain: Stain = Stain.OTHER

    @property
    def roi_id(self) -> str:
        return Path(self.roi_path).stem


@dataclass(frozen=True)
class ChipConfig:
    window_px: int = 2000
    overlap_frac: float = 0.5
    downsample_factor: int = 2

    def __post_init__(self):
        if self.window_px < 1 or self.downsample_factor < 1:
            raise ValueError("window_px and downsample_factor must be >= 1")
        if not 0 <= self.overlap_frac < 1:
            raise ValueError(f"overlap_frac must be in [0, 1), got {self.overlap_frac}")
        if self.window_px % self.downsample_factor:
            raise ValueError("window_px must be divisible by downsample_factor")
        stride = self.window_px * (1 - self.overlap_frac)
        if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
            raise ValueError(f"stride {stride} is not a positive integer")

    @property
    def stride(self) -> int:
        return int(round(self.window_px * (1 - self.overlap_frac)))

    @property
    def chip_px(self) -> int:
        return self.window_px // self.downsample_factor


@dataclass(frozen=True)
class Chip:
    image: Image
    patient_id: str
    slide_id: str
    roi_id: str
    offset_x: int
    offset_y: int


@dataclass(frozen=True)
class ManifestRow:
    chip_path: str
    patient_id: str
    slide_id: str
    roi_id: str
    offset_x: int
    offset_y: int
    stain: str
    baseline_egfr: float
    egfr_12mo: float

    def sort_key(self):
        return (self.patient_id, self.slide_id, self.roi_id, self.offset_y, self.offset_x)


@dataclass
class Manifest:
    rows: List[ManifestRow]
    root: Path  # chip_path entries are relative to this directory

    def __len__(self):
        return len(self.rows)

    def path_of(self, row: ManifestRow) -> Path:
        return self.root / row.chip_path

    @property
    def patient_ids(self) -> List[str]:
        return sorted({r.patient_id for r in self.rows})


def plan_windows(dim: int, window: int, stride: int) -> List[int]:
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if dim < window:
        return []
    return list(range(0, dim - window + 1, stride))


def chip_roi(roi: Image, meta: RoiRecord, cfg: ChipConfig = ChipConfig()) -> List[Chip]:
    if roi.channels != 3:
        raise ImageError(f"ROI {meta.roi_path} has {roi.channels} channels, expected 3")
    ys = plan_windows(roi.height, cfg.window_px, cfg.stride)
    xs = plan_windows(roi.width, cfg.window_px, cfg.stride)
    if not ys or not xs:
        log.warning("ROI %s (%dx%d) smaller than the %d px window; skipped",
                    meta.roi_path, roi.width, roi.height, cfg.window_px)
        return []
    chips = []
    for oy in ys:
        for ox in xs:
            window = crop(roi, oy, ox, cfg.window_px, cfg.window_px)
            chips.append(Chip(downsample(window, cfg.downsample_factor), meta.patient_id,
                              meta.slide_id, meta.roi_id, ox, oy))
    return chips


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _read_csv(path: PathLike, columns: Sequence[str]) -> List[dict]:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in columns if c not in header]
            if missing:
                raise DataError(f"{path}: missing columns {missing}")
            return [row for row in reader]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_rois(path: PathLike) -> List[RoiRecord]:
    """ROI paths in the CSV are resolved relative to the CSV's directory."""
    base = Path(path).parent
    out = []
    for i, row in enumerate(_read_csv(path, ROI_COLUMNS)):
        if not row["patient_id"]:
            raise DataError(f"{path}: row {i + 2} has empty patient_id")
        out.append(RoiRecord(_resolve(row["roi_path"], base), row["patient_id"],
                             row["slide_id"], Stain.parse(row["stain"])))
    return out


def read_patients(path: PathLike) -> Dict[str, PatientRecord]:
    table = {}
    for i, row in enumerate(_read_csv(path, PATIENT_COLUMNS)):
        try:
            rec = PatientRecord(row["patient_id"], float(row["baseline_egfr"]), float(row["egfr_12mo"]))
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from exc
        if rec.patient_id in table:
            raise DataError(f"{path}: duplicate patient_id {rec.patient_id}")
        table[rec.patient_id] = rec
    return table


def write_patients(patients: Iterable[PatientRecord], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATIENT_COLUMNS)
        for p in patients:
            w.writerow([p.patient_id, repr(p.baseline_egfr), repr(p.egfr_12mo)])


def write_rois(rois: Iterable[RoiRecord], path: PathLike) -> None:
    base = Path(path).parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROI_COLUMNS)
        for r in rois:
            p = Path(r.roi_path)
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            w.writerow([p.as_posix(), r.patient_id, r.slide_id, r.stain.value])


def write_manifest(manifest: Manifest, path: Optional[PathLike] = None) -> Path:
    path = Path(path) if path else manifest.root / "manifest.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            w.writerow([r.chip_path, r.patient_id, r.slide_id, r.roi_id, r.offset_x, r.offset_y,
                        r.stain, repr(r.baseline_egfr), repr(r.egfr_12mo)])
    return path


def read_manifest(path: PathLike) -> Manifest:
    rows = []
    for i, row in enumerate(_read_csv(path, MANIFEST_COLUMNS)):
        try:
            rows.append(ManifestRow(row["chip_path"], row["patient_id"], row["slide_id"], row["roi_id"],
                                    int(row["offset_x"]), int(row["offset_y"]), row["stain"],
                                    float(row["baseline_egfr"]), float(row["egfr_12mo"])))
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty manifest")
    return Manifest(rows, Path(path).parent)


def _chip_one(roi: RoiRecord, patient: PatientRecord, cfg: ChipConfig, out_dir: Path,
              strict: bool) -> List[ManifestRow]:
    try:
        img = load_image(roi.roi_path)
        chips = chip_roi(img, roi, cfg)
    except ImageError as exc:
        if strict:
            raise DataError(str(exc)) from exc
        log.warning("skipping ROI %s: %s", roi.roi_path, exc)
        return []
    rows = []
    for chip in chips:
        rel = Path("chips") / chip.patient_id / chip.slide_id / \
            f"{chip.roi_id}_y{chip.offset_y:06d}_x{chip.offset_x:06d}.png"
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        save_image(chip.image, out_dir / rel)
        rows.append(ManifestRow(rel.as_posix(), chip.patient_id, chip.slide_id, chip.roi_id,
                                chip.offset_x, chip.offset_y, roi.stain.value,
                                patient.baseline_egfr, patient.egfr_12mo))
    return rows


def build_chip_db(rois: Sequence[RoiRecord], patients: Mapping[str, PatientRecord],
                  cfg: ChipConfig = ChipConfig(), out_dir: PathLike = "chips_db",
                  strict: bool = True, workers: int = 1) -> Manifest:
    """Chip every ROI, write PNGs under ``out_dir`` and ``out_dir/manifest.csv``.

    ROIs are independent; with ``workers > 1`` they are chipped concurrently
    and the manifest is still emitted in sorted order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for roi in rois:
        if roi.patient_id not in patients:
            if strict:
                raise DataError(f"ROI {roi.roi_path} references unknown patient {roi.patient_id!r}")
            log.warning("skipping ROI %s: unknown patient %r", roi.roi_path, roi.patient_id)
            continue
        jobs.append(roi)
    ids = [(r.patient_id, r.slide_id, r.roi_id) for r in jobs]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate (patient_id, slide_id, roi_id); ROI file stems must be unique per slide")

    def work(roi):
        return _chip_one(roi, patients[roi.patient_id], cfg, out_dir, strict)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, jobs))
    else:
        parts = [work(r) for r in jobs]
    rows = sorted((row for part in parts for row in part), key=ManifestRow.sort_key)
    manifest = Manifest(rows, out_dir)
    write_manifest(manifest)
    return manifest
