"""Training, per-patient prediction and patient-level cross-validation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .. import checkpoint
from ..augment import AugmentConfig, augment_downsampled
from ..chipper import DataError, Manifest, ManifestRow
from ..imgcore import Image, center_crop, downsample, load_image
from ..nn import (AuxScaler, NetworkConfig, NumericError, Params, backward, forward, images_to_batch,
                  init_params, mse_loss)
from ..optim import OptimizerState, lr_at, rmsprop_step
from ..rng import stream
from .config import RunConfig, dump_config
from .evaluate import EvalReport, PatientRow, evaluate, export_report, write_predictions
from .folds import FoldSplit, assign_folds, split_manifest

log = logging.getLogger(__name__)

TARGET_SCALE = 100.0  # the network regresses eGFR / 100


class EpochLog(NamedTuple):
    epoch: int
    lr: float
    train_loss: float
    val_mae: float


@dataclass
class Model:
    net: NetworkConfig
    params: Params
    aug: AugmentConfig
    scaler: Optional[AuxScaler] = None

    def prepare(self, chip: Image) -> Image:
        """Deterministic inference view: load-time downsample then center crop."""
        small = downsample(chip, self.aug.load_downsample)
        return center_crop(small, self.aug.crop_px, self.aug.crop_px)

    def aux_for(self, baselines: Sequence[float]) -> Optional[np.ndarray]:
        if self.net.aux_dim == 0:
            return None
        return self.scaler.transform(np.asarray(baselines, dtype=np.float64)[:, None])

    def predict_views(self, views: Sequence[Image], baselines: Sequence[float],
                      batch_size: int = 64) -> np.ndarray:
        """Per-chip eGFR for already-prepared views."""
        out = []
        for s in range(0, len(views), batch_size):
            batch = images_to_batch(views[s:s + batch_size])
            pred, _ = forward(self.net, self.params, batch, self.aux_for(baselines[s:s + batch_size]))
            out.append(pred.astype(np.float64) * TARGET_SCALE)
        return np.concatenate(out) if out else np.zeros(0)

    def tensors(self) -> Dict[str, np.ndarray]:
        t = {k: v.astype(np.float64) for k, v in self.params.items()}
        if self.scaler is not None:
            t["aux.mean"] = np.asarray(self.scaler.mean, dtype=np.float64)
            t["aux.std"] = np.asarray(self.scaler.std, dtype=np.float64)
        return t

    def save(self, path: Union[str, Path]) -> None:
        checkpoint.save(path, self.tensors(), self.net)

    @classmethod
    def load(cls, path, net: NetworkConfig, aug: AugmentConfig, dtype=np.float64) -> "Model":
        t = checkpoint.load(path, net)
        scaler = None
        if "aux.mean" in t:
            scaler = AuxScaler(t.pop("aux.mean"), t.pop("aux.std"))
        return cls(net, {k: v.astype(dtype) for k, v in t.items()}, aug, scaler)


def average_predictions(chip_predictions: Sequence[float]) -> float:
    preds = np.asarray(chip_predictions, dtype=np.float64)
    if preds.size == 0:
        raise ValueError("patient has no chips")
    return float(preds.mean())


def predict_patient(model: Model, chips: Sequence[Image], baseline_egfr: Optional[float] = None) -> float:
    """Mean of per-chip predictions on the deterministic (un-augmented) views."""
    if not chips:
        raise ValueError("patient has no chips")
    if model.net.aux_dim and baseline_egfr is None:
        raise ValueError("model uses baseline eGFR as aux input")
    views = [model.prepare(c) for c in chips]
    preds = model.predict_views(views, [baseline_egfr or 0.0] * len(views))
    return average_predictions(preds)


class ChipStore:
    """Lazily loads manifest chips once, keeping the load-time downsampled copy."""

    def __init__(self, manifest: Manifest, aug: AugmentConfig):
        self.manifest = manifest
        self.aug = aug
        self._small: Dict[int, Image] = {}
        self._views: Dict[int, Image] = {}

    def small(self, idx: int) -> Image:
        img = self._small.get(idx)
        if img is None:
            path = self.manifest.path_of(self.manifest.rows[idx])
            try:
                img = downsample(load_image(path), self.aug.load_downsample)
            except ValueError as exc:
                raise DataError(f"chip {path}: {exc}") from exc
            self._small[idx] = img
        return img

    def view(self, idx: int) -> Image:
        img = self._views.get(idx)
        if img is None:
            img = center_crop(self.small(idx), self.aug.crop_px, self.aug.crop_px)
            self._views[idx] = img
        return img

    def replace(self, idx: int, chip: Image) -> None:
        """Swap a chip's pixels in memory (used to probe leakage)."""
        self._small[idx] = downsample(chip, self.aug.load_downsample)
        self._views.pop(idx, None)


@dataclass
class TrainResult:
    model: Model
    log: List[EpochLog] = field(default_factory=list)
    train_patients: List[str] = field(default_factory=list)
    val_patients: List[str] = field(default_factory=list)


def _patient_groups(rows_idx: Sequence[int], rows: Sequence[ManifestRow]) -> Dict[str, List[int]]:
    groups: Dict[str, List[int]] = {}
    for i in rows_idx:
        groups.setdefault(rows[i].patient_id, []).append(i)
    return groups


def predict_rows(model: Model, store: ChipStore, idx: Sequence[int]) -> List[PatientRow]:
    """Per-patient rows (sorted by patient_id) for the given manifest indices."""
    rows = store.manifest.rows
    groups = _patient_groups(idx, rows)
    out = []
    for pid in sorted(groups):
        members = groups[pid]
        preds = model.predict_views([store.view(i) for i in members],
                                    [rows[i].baseline_egfr for i in members])
        r = rows[members[0]]
        out.append(PatientRow(pid, r.egfr_12mo, average_predictions(preds), r.baseline_egfr))
    return out


def train_fold(manifest: Manifest, split: FoldSplit, fold: int, cfg: RunConfig, seed: int,
               store: Optional[ChipStore] = None,
               progress: Optional[Callable[[int, EpochLog], None]] = None) -> TrainResult:
    """Train on every patient outside ``fold``; validate on the fold's patients.

    Augmentation draws come from ``stream(seed, "aug", epoch, manifest_index)``
    and the batch order from ``stream(seed, "order", fold, epoch)``.
    """
    train_rows, val_rows = split_manifest(manifest, split, fold)
    if not train_rows:
        raise DataError(f"fold {fold}: empty training partition")
    store = store or ChipStore(manifest, cfg.aug)
    index = {id(r): i for i, r in enumerate(manifest.rows)}
    train_idx = np.array([index[id(r)] for r in train_rows])
    val_idx = [index[id(r)] for r in val_rows]
    train_pids = sorted({r.patient_id for r in train_rows})
    val_pids = sorted({r.patient_id for r in val_rows})
    assert not set(train_pids) & set(val_pids)

    net = cfg.network()
    opt = cfg.opt
    rows = manifest.rows
    scaler = AuxScaler.fit([rows[i].baseline_egfr for i in train_idx]) if net.aux_dim else None
    targets = np.array([r.egfr_12mo for r in rows]) / TARGET_SCALE
    params = init_params(net, stream(seed, "init", fold), dtype=cfg.dtype)
    # start at the training mean so early steps go to features, not the offset
    params["out.b"][:] = targets[train_idx].mean()
    model = Model(net, params, cfg.aug, scaler)
    state = OptimizerState.fresh(params)
    aux_all = model.aux_for([r.baseline_egfr for r in rows])
    history = []
    for epoch in range(opt.epochs):
        lr = lr_at(epoch, opt)
        order = train_idx[stream(seed, "order", fold, epoch).permutation(len(train_idx))]
        loss_sum = 0.0
        for start in range(0, len(order), opt.batch_size):
            batch_idx = order[start:start + opt.batch_size]
            views = [augment_downsampled(store.small(i), stream(seed, "aug", epoch, int(i)), cfg.aug)
                     for i in batch_idx]
            x = images_to_batch(views)
            aux = None if aux_all is None else aux_all[batch_idx]
            try:
                pred, cache = forward(net, model.params, x, aux)
                loss, grad = mse_loss(pred, targets[batch_idx])
                grads = backward(net, model.params, cache, grad)
                model.params, state = rmsprop_step(model.params, grads, state, lr, opt)
            except NumericError as exc:
                raise NumericError(f"fold {fold} epoch {epoch} step {state.step_count}: {exc}") from exc
            loss_sum += loss * len(batch_idx)
        val_mae = float("nan")
        if val_idx:
            val = predict_rows(model, store, val_idx)
            val_mae = float(np.mean([abs(r.truth - r.prediction) for r in val]))
        entry = EpochLog(epoch, lr, loss_sum / len(order), val_mae)
        history.append(entry)
        log.info("fold %d epoch %d lr %.3g loss %.5f val_mae %.3f", fold, *entry)
        if progress:
            progress(fold, entry)
    return TrainResult(model, history, train_pids, val_pids)


def write_log(entries: Sequence[EpochLog], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EpochLog._fields)
        for e in entries:
            w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.val_mae)])


@dataclass
class CVResult:
    split: FoldSplit
    fold_rows: List[List[PatientRow]]
    fold_reports: List[Optional[EvalReport]]
    pooled: EvalReport
    logs: List[List[EpochLog]]
    seconds: float = 0.0


def run_cv(manifest: Manifest, k: int, seed: int, cfg: RunConfig,
           out_dir: Optional[Union[str, Path]] = None, store: Optional[ChipStore] = None,
           progress: Optional[Callable[[int, EpochLog], None]] = None) -> CVResult:
    """k-fold patient-level CV; every patient is predicted exactly once.

    ``seed`` drives both the fold assignment and training. When ``out_dir``
    is given, per-fold and pooled reports, logs and checkpoints are written.
    """
    t0 = time.perf_counter()
    split = assign_folds(manifest.patient_ids, k, seed)
    store = store or ChipStore(manifest, cfg.aug)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.conf").write_text(dump_config(cfg), encoding="utf-8")
        with open(out / "folds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "fold"])
            for pid in sorted(split.assignment):
                w.writerow([pid, split.assignment[pid]])
    fold_rows, fold_reports, logs = [], [], []
    for fold in range(k):
        result = train_fold(manifest, split, fold, cfg, seed, store, progress)
        _, val_rows = split_manifest(manifest, split, fold)
        index = {id(r): i for i, r in enumerate(manifest.rows)}
        rows = predict_rows(result.model, store, [index[id(r)] for r in val_rows])
        fold_rows.append(rows)
        logs.append(result.log)
        try:
            report = evaluate(rows)
        except ValueError:
            report = None  # too few (or identical) truths in this fold for a fit
        fold_reports.append(report)
        if out is not None:
            fdir = out / f"fold{fold}"
            fdir.mkdir(exist_ok=True)
            result.model.save(fdir / "model.glom")
            write_log(result.log, fdir / "train_log.csv")
            if report is not None:
                export_report(report, fdir, title=f"fold {fold}")
            else:
                write_predictions(rows, fdir / "report.csv")
    pooled_rows = sorted((r for rows in fold_rows for r in rows), key=lambda r: r.patient_id)
    seen = [r.patient_id for r in pooled_rows]
    if len(seen) != len(set(seen)) or set(seen) != set(split.assignment):
        raise AssertionError("pooled rows do not partition the patient set")
    pooled = evaluate(pooled_rows)
    if out is not None:
        export_report(pooled, out, stem="pooled", title=f"{k}-fold CV, aux={cfg.aux}")
    return CVResult(split, fold_rows, fold_reports, pooled, logs, time.perf_counter() - t0)
