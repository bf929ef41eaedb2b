import re
import time
from dataclasses import replace

import pytest

from glomnet.augment import AugmentConfig
from glomnet.chipper import ChipConfig, build_chip_db, read_patients, read_rois
from glomnet.harness.config import RunConfig, desk_config
from glomnet.harness.synth import SynthConfig, synth_generate
from glomnet.harness.train import run_cv
from glomnet.nn import NetworkConfig
from glomnet.optim import OptimizerConfig

# 32 px windows -> 16 px chips -> 8 px network inputs
TINY = RunConfig(net=NetworkConfig(input_side=8, conv_groups=((2, 1),), dense_widths=(4,)),
                 opt=OptimizerConfig(lr0=1e-3, epochs=2, batch_size=4),
                 aug=AugmentConfig(crop_px=8, load_downsample=2),
                 chip=ChipConfig(window_px=32, overlap_frac=0.5, downsample_factor=2),
                 synth=SynthConfig(n_patients=10, chips_per_patient=2, chip_px=32, max_blobs=6,
                                   blob_radius_min=2, blob_radius_max=4))


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    out = synth_generate(TINY.synth, root / "data")
    return build_chip_db(read_rois(out.rois_csv), read_patients(out.patients_csv), TINY.chip, root / "db")


@pytest.fixture
def tiny_off(tiny_cfg):
    return replace(tiny_cfg, aux="off")


# -- desk-scale synthetic cohort, trained once per session -------------------

class EndToEnd:
    """Synthetic cohort plus aux-on (twice) and aux-off cross-validation runs."""

    def __init__(self, root):
        self.root = root
        self.cfg = desk_config()
        t0 = time.perf_counter()
        out = synth_generate(self.cfg.synth, root / "data")
        self.manifest = build_chip_db(read_rois(out.rois_csv), read_patients(out.patients_csv),
                                      self.cfg.chip, root / "db")
        self.aux_on = run_cv(self.manifest, 5, 0, self.cfg, root / "cv_on")
        self.seconds = time.perf_counter() - t0
        self.rerun = run_cv(self.manifest, 5, 0, self.cfg, root / "cv_on_rerun")
        self.aux_off = run_cv(self.manifest, 5, 0, replace(self.cfg, aux="off"), root / "cv_off")


@pytest.fixture(scope="session")
def end_to_end(tmp_path_factory):
    return EndToEnd(tmp_path_factory.mktemp("e2e"))


# -- acceptance summary --------------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    detail = dict(report.user_properties).get("detail", "")
    prev = _CRITERIA.get(n, (True, ""))
    if report.when == "call" or report.failed:
        _CRITERIA[n] = (prev[0] and report.passed, detail or prev[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
