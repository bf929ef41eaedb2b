"""Per-patient evaluation against the propagate-the-baseline reference."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from ..chipper import DataError, PatientRecord

PREDICTION_COLUMNS = ("patient_id", "truth", "prediction", "baseline")


class PatientRow(NamedTuple):
    patient_id: str
    truth: float
    prediction: float
    baseline: float


@dataclass(frozen=True)
class EvalReport:
    rows: Tuple[PatientRow, ...]
    mae: float
    baseline_mae: float
    relative_reduction: float
    fit_slope: float
    fit_intercept: float
    identity_residual_rms: float

    def metrics(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        d["n_patients"] = len(self.rows)
        return d


def baseline_propagation(p: PatientRecord) -> float:
    """The reference model: next year's eGFR equals today's."""
    return p.baseline_egfr


def ols_fit(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Least-squares line y = slope * x + intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise ValueError("constant truths: fit slope undefined")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    return slope, float(ym - slope * xm)


def evaluate(rows: Iterable) -> EvalReport:
    """``rows`` are PatientRow or (patient_id, truth, prediction, baseline) tuples.

    Plain (truth, prediction, baseline) triples are accepted and numbered.
    """
    parsed = []
    for i, r in enumerate(rows):
        if len(r) == 3:
            r = (str(i), *r)
        parsed.append(PatientRow(str(r[0]), float(r[1]), float(r[2]), float(r[3])))
    if len(parsed) < 2:
        raise ValueError(f"need at least 2 rows to evaluate, got {len(parsed)}")
    truth = np.array([r.truth for r in parsed])
    pred = np.array([r.prediction for r in parsed])
    base = np.array([r.baseline for r in parsed])
    mae = float(np.mean(np.abs(truth - pred)))
    baseline_mae = float(np.mean(np.abs(truth - base)))
    reduction = (baseline_mae - mae) / baseline_mae if baseline_mae > 0 else math.nan
    slope, intercept = ols_fit(truth, pred)
    rms = float(np.sqrt(np.mean((pred - truth) ** 2)))
    return EvalReport(tuple(parsed), mae, baseline_mae, reduction, slope, intercept, rms)


def write_predictions(rows: Iterable[PatientRow], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r in rows:
            w.writerow([r.patient_id, repr(float(r.truth)), repr(float(r.prediction)), repr(float(r.baseline))])


def read_predictions(path: Union[str, Path]) -> List[PatientRow]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if list(reader.fieldnames or [])[:4] != list(PREDICTION_COLUMNS):
                raise DataError(f"{path}: expected header {','.join(PREDICTION_COLUMNS)}")
            return [PatientRow(r["patient_id"], float(r["truth"]), float(r["prediction"]),
                               float(r["baseline"])) for r in reader]
    except (OSError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"cannot read predictions {path}: {exc}") from exc


def _nice_range(values) -> Tuple[float, float]:
    lo, hi = float(min(values)), float(max(values))
    pad = max((hi - lo) * 0.05, 1.0)
    return math.floor((lo - pad) / 10) * 10, math.ceil((hi + pad) / 10) * 10


def scatter_svg(report: EvalReport, title: str = "") -> str:
    size, margin = 480, 60
    span = size - 2 * margin
    truths = [r.truth for r in report.rows]
    preds = [r.prediction for r in report.rows]
    lo, hi = _nice_range(truths + preds)

    def sx(v):
        return margin + (v - lo) / (hi - lo) * span

    def sy(v):
        return size - margin - (v - lo) / (hi - lo) * span

    def line(x0, y0, x1, y1, **attrs):
        extra = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        return f'<line x1="{sx(x0):.2f}" y1="{sy(y0):.2f}" x2="{sx(x1):.2f}" y2="{sy(y1):.2f}" {extra}/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
           f'<g class="axes" stroke="black">',
           line(lo, lo, hi, lo), line(lo, lo, lo, hi), "</g>"]
    ticks = np.linspace(lo, hi, 6)
    for t in ticks:
        out.append(f'<text x="{sx(t):.2f}" y="{size - margin + 16}" text-anchor="middle">{t:g}</text>')
        out.append(f'<text x="{margin - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{size / 2}" y="{size - 14}" text-anchor="middle">'
               f'true eGFR (mL/min/1.73 m²)</text>')
    out.append(f'<text x="16" y="{size / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {size / 2})">predicted eGFR (mL/min/1.73 m²)</text>')
    if title:
        out.append(f'<text x="{size / 2}" y="24" text-anchor="middle">{escape(title)}</text>')
    out.append(line(lo, lo, hi, hi, stroke="gray", stroke_dasharray="4 3", **{"class": "identity"}))
    b, a = report.fit_slope, report.fit_intercept
    out.append(line(lo, a + b * lo, hi, a + b * hi, stroke="crimson", **{"class": "fit"}))
    for r in report.rows:
        out.append(f'<circle cx="{sx(r.truth):.2f}" cy="{sy(r.prediction):.2f}" r="4" '
                   f'fill="steelblue" fill-opacity="0.8"><title>{escape(r.patient_id)}</title></circle>')
    out.append(f'<text x="{margin + 8}" y="{margin + 4}">MAE {report.mae:.2f} '
               f'(baseline {report.baseline_mae:.2f})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_report(report: EvalReport, out_dir: Union[str, Path], stem: str = "report",
                  title: str = "") -> Tuple[Path, Path]:
    """Write ``<stem>.csv`` (per-patient rows), ``<stem>.svg`` and ``<stem>.json``."""
    if not report.rows:
        raise ValueError("empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"
    write_predictions(report.rows, csv_path)
    svg_path.write_text(scatter_svg(report, title), encoding="utf-8")
    (out_dir / f"{stem}.json").write_text(json.dumps(report.metrics(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return csv_path, svg_path
