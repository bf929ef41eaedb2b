"""Command-line entry point: ``glomnet <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from ..checkpoint import CheckpointError
from ..chipper import ChipConfig, DataError, build_chip_db, read_manifest, read_patients, read_rois
from ..imgcore import ImageError, downsample, load_image, save_image
from ..nn import NumericError
from ..segment import find_segments
from .config import AUX_MODES, ConfigError, RunConfig, load_config
from .evaluate import evaluate, export_report, read_predictions
from .folds import assign_folds, split_manifest
from .synth import synth_generate
from .train import ChipStore, predict_rows, run_cv, train_fold, write_log

log = logging.getLogger("glomnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

BOX_COLUMNS = ("slide_id", "component_idx", "center_x", "center_y", "length", "width", "angle_deg", "area_px")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "aux", None):
        cfg = replace(cfg, aux=args.aux)
    return cfg


def _print_metrics(report) -> None:
    print(json.dumps(report.metrics(), indent=2, sort_keys=True))


def cmd_synth(args) -> int:
    cfg = _config(args)
    syn = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    out = synth_generate(syn, args.out)
    print(f"wrote {syn.n_patients} patients: {out.patients_csv} {out.rois_csv}")
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _config(args)
    factor = cfg.seg_downsample
    img = load_image(args.slide)
    if factor > 1:
        h, w = img.height - img.height % factor, img.width - img.width % factor
        img = downsample(type(img)(img.pixels[:h, :w], img.pixel_size_um), factor)
    segments = find_segments(img, cfg.seg.for_downsample(factor))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    slide_id = Path(args.slide).stem
    with open(out / f"{slide_id}_boxes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOX_COLUMNS)
        for i, seg in enumerate(segments):
            b = seg.box
            # boxes are reported in full-resolution pixels
            w.writerow([slide_id, i, repr(b.center_x * factor), repr(b.center_y * factor),
                        repr(b.length * factor), repr(b.width * factor), repr(b.angle_deg),
                        seg.area_px * factor * factor])
            save_image(seg.image, out / f"{slide_id}_{i:03d}.png")
    print(f"{slide_id}: {len(segments)} segments")
    return EXIT_OK


def cmd_chip(args) -> int:
    cfg = _config(args)
    chip = cfg.chip
    kv = {k: v for k, v in (("window_px", args.window), ("overlap_frac", args.overlap),
                            ("downsample_factor", args.downsample)) if v is not None}
    try:
        chip = replace(chip, **kv)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = build_chip_db(read_rois(args.rois), read_patients(args.patients), chip, args.out,
                             strict=not args.lenient, workers=args.workers)
    print(f"wrote {len(manifest)} chips for {len(manifest.patient_ids)} patients to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest = read_manifest(args.manifest)
    split = assign_folds(manifest.patient_ids, args.k, args.seed)
    if not 0 <= args.fold < args.k:
        raise UsageError(f"--fold must be in [0, {args.k})")
    store = ChipStore(manifest, cfg.aug)
    result = train_fold(manifest, split, args.fold, cfg, args.seed, store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.model.save(out / "model.glom")
    write_log(result.log, out / "train_log.csv")
    _, val_rows = split_manifest(manifest, split, args.fold)
    index = {id(r): i for i, r in enumerate(manifest.rows)}
    rows = predict_rows(result.model, store, [index[id(r)] for r in val_rows])
    report = evaluate(rows)
    export_report(report, out, title=f"fold {args.fold}")
    _print_metrics(report)
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _config(args)
    manifest = read_manifest(args.manifest)
    result = run_cv(manifest, args.k, args.seed, cfg, args.out)
    _print_metrics(result.pooled)
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(read_predictions(args.predictions))
    export_report(report, args.out)
    _print_metrics(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glomnet", description="eGFR regression from kidney biopsy image chips")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, help="override synth.seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="threshold a slide and crop oriented tissue segments")
    s.add_argument("--slide", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("chip", help="cut ROIs into overlapping chips and write a manifest")
    s.add_argument("--rois", required=True)
    s.add_argument("--patients", required=True)
    s.add_argument("--config")
    s.add_argument("--window", type=int)
    s.add_argument("--overlap", type=float)
    s.add_argument("--downsample", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--lenient", action="store_true", help="skip unreadable ROIs instead of failing")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_chip)

    for name, helptext in (("train", "train one cross-validation fold"), ("cv", "k-fold cross-validation")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--manifest", required=True)
        if name == "train":
            s.add_argument("--fold", type=int, required=True)
        s.add_argument("--k", type=int, default=5)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--config")
        s.add_argument("--aux", choices=AUX_MODES)
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_train if name == "train" else cmd_cv)

    s = sub.add_parser("eval", help="score a predictions CSV against the baseline")
    s.add_argument("--predictions", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ImageError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
