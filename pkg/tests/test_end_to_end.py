from dataclasses import replace

import numpy as np
import pytest

from glomnet.chipper import build_chip_db, read_patients, read_rois
from glomnet.harness.config import desk_config
from glomnet.harness.folds import split_manifest
from glomnet.harness.synth import synth_generate
from glomnet.harness.train import run_cv


@pytest.mark.slow
def test_ablated_signal_is_no_better_than_training_mean(tmp_path):
    cfg = desk_config()
    cfg = replace(cfg, aux="off", synth=replace(cfg.synth, chips_per_patient=4, ablate_signal=True))
    out = synth_generate(cfg.synth, tmp_path / "data")
    manifest = build_chip_db(read_rois(out.rois_csv), read_patients(out.patients_csv), cfg.chip, tmp_path / "db")
    res = run_cv(manifest, 5, 0, cfg)
    model_err, mean_err = [], []
    for fold, rows in enumerate(res.fold_rows):
        train, _ = split_manifest(manifest, res.split, fold)
        mean = np.mean([r.egfr_12mo for r in train])
        model_err += [abs(r.truth - r.prediction) for r in rows]
        mean_err += [abs(r.truth - mean) for r in rows]
    diff = np.array(mean_err) - np.array(model_err)
    noise = 2 * diff.std(ddof=1) / np.sqrt(diff.size)
    assert diff.mean() <= noise


def test_signal_beats_baseline_per_fold(end_to_end):
    wins = sum(r.mae < r.baseline_mae for r in end_to_end.aux_on.fold_reports if r is not None)
    assert wins >= 4
