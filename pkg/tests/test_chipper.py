import csv
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glomnet.chipper import (ChipConfig, DataError, PatientRecord, RoiRecord, Stain, build_chip_db, chip_roi,
                             plan_windows, read_manifest, read_patients, read_rois, write_patients, write_rois)
from glomnet.imgcore import Image, load_image, save_image

from oracles import brute_windows


def gray_roi(h, w, seed=0):
    return Image(np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8))


class TestPlanWindows:
    def test_full_scale_geometry(self):
        cfg = ChipConfig()
        assert cfg.stride == 1000 and cfg.chip_px == 1000
        assert len(plan_windows(8000, 2000, 1000)) ** 2 == 49

    def test_exact_fit(self):
        assert plan_windows(3000, 2000, 1000) == [0, 1000]
        assert plan_windows(2000, 2000, 1000) == [0]

    def test_undersized(self):
        assert plan_windows(1999, 2000, 1000) == []

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 5000), st.integers(1, 3000), st.integers(1, 3000))
    def test_matches_brute_force(self, dim, window, stride):
        assert plan_windows(dim, window, stride) == brute_windows(dim, window, stride)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ChipConfig(window_px=2001, downsample_factor=2)
        with pytest.raises(ValueError):
            ChipConfig(overlap_frac=1.0)
        with pytest.raises(ValueError):
            ChipConfig(window_px=10, overlap_frac=0.33, downsample_factor=1)


class TestChipRoi:
    CFG = ChipConfig(window_px=40, overlap_frac=0.5, downsample_factor=2)
    META = RoiRecord("r.png", "P1", "S1", Stain.TRI)

    def test_count_and_offsets(self):
        chips = chip_roi(gray_roi(60, 100), self.META, self.CFG)
        assert len(chips) == 2 * 4
        assert [(c.offset_y, c.offset_x) for c in chips[:4]] == [(0, 0), (0, 20), (0, 40), (0, 60)]
        assert all(c.image.width == 20 and c.image.height == 20 for c in chips)

    def test_content_is_downsampled_window(self):
        roi = gray_roi(40, 60, seed=1)
        chip = chip_roi(roi, self.META, self.CFG)[1]
        window = roi.pixels[0:40, 20:60].astype(int)
        ref = (2 * window.reshape(20, 2, 20, 2, 3).sum(axis=(1, 3)) + 4) // 8
        assert np.array_equal(chip.image.pixels, ref)

    def test_undersized_roi_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert chip_roi(gray_roi(30, 100), self.META, self.CFG) == []
        assert "smaller" in caplog.text

    def test_rectangular_roi(self):
        cfg = ChipConfig()
        roi = Image(np.zeros((2000, 5000, 3), np.uint8))
        assert len(chip_roi(roi, self.META, cfg)) == 4


def write_dataset(root, n_patients=2, rois_per_patient=2, h=60, w=100):
    roi_dir = root / "rois"
    roi_dir.mkdir(parents=True)
    patients, rois = [], []
    for p in range(n_patients):
        pid = f"P{p}"
        patients.append(PatientRecord(pid, 50.0 + p, 40.5 + p))
        for r in range(rois_per_patient):
            path = roi_dir / f"{pid}_r{r}.png"
            save_image(gray_roi(h, w, seed=10 * p + r), path)
            rois.append(RoiRecord(path, pid, "S0", Stain.TRI if r % 2 == 0 else Stain.PASD))
    write_patients(patients, root / "patients.csv")
    write_rois(rois, root / "rois.csv")
    return root / "rois.csv", root / "patients.csv"


class TestBuildChipDb:
    CFG = ChipConfig(window_px=40, overlap_frac=0.5, downsample_factor=2)

    def test_manifest_rows_and_files(self, tmp_path):
        rois_csv, pat_csv = write_dataset(tmp_path / "in")
        m = build_chip_db(read_rois(rois_csv), read_patients(pat_csv), self.CFG, tmp_path / "db")
        assert len(m) == 2 * 2 * 8
        assert m.patient_ids == ["P0", "P1"]
        assert [r.sort_key() for r in m.rows] == sorted(r.sort_key() for r in m.rows)
        row = m.rows[0]
        assert row.baseline_egfr == 50.0 and row.egfr_12mo == 40.5 and row.stain == "TRI"
        assert load_image(m.path_of(row)).width == 20

    def test_manifest_round_trip(self, tmp_path):
        rois_csv, pat_csv = write_dataset(tmp_path / "in")
        m = build_chip_db(read_rois(rois_csv), read_patients(pat_csv), self.CFG, tmp_path / "db")
        back = read_manifest(tmp_path / "db" / "manifest.csv")
        assert back.rows == m.rows

    def test_rebuild_byte_identical(self, tmp_path):
        rois_csv, pat_csv = write_dataset(tmp_path / "in")
        rois, pats = read_rois(rois_csv), read_patients(pat_csv)
        build_chip_db(rois, pats, self.CFG, tmp_path / "a")
        build_chip_db(rois, pats, self.CFG, tmp_path / "b", workers=3)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for f in files_a:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_two_patients_seven_rois(self, tmp_path):
        rois_csv, pat_csv = write_dataset(tmp_path / "in", 2, 7, 60, 60)
        cfg = ChipConfig(window_px=40, overlap_frac=0.5, downsample_factor=2)
        m = build_chip_db(read_rois(rois_csv), read_patients(pat_csv), cfg, tmp_path / "db")
        assert len(m) == 2 * 7 * 4

    def test_unknown_patient(self, tmp_path):
        rois_csv, pat_csv = write_dataset(tmp_path / "in")
        pats = read_patients(pat_csv)
        del pats["P1"]
        with pytest.raises(DataError, match="unknown patient"):
            build_chip_db(read_rois(rois_csv), pats, self.CFG, tmp_path / "db")
        m = build_chip_db(read_rois(rois_csv), pats, self.CFG, tmp_path / "db2", strict=False)
        assert m.patient_ids == ["P0"]

    def test_corrupt_roi(self, tmp_path):
        rois_csv, pat_csv = write_dataset(tmp_path / "in")
        (tmp_path / "in" / "rois" / "P0_r0.png").write_bytes(b"junk")
        with pytest.raises(DataError):
            build_chip_db(read_rois(rois_csv), read_patients(pat_csv), self.CFG, tmp_path / "db")
        m = build_chip_db(read_rois(rois_csv), read_patients(pat_csv), self.CFG, tmp_path / "db2", strict=False)
        assert len(m) == 3 * 8


class TestRecords:
    def test_patient_validation(self):
        with pytest.raises(DataError):
            PatientRecord("P", 0.0, 10.0)
        with pytest.raises(DataError):
            PatientRecord("P", 10.0, float("nan"))

    def test_stain_parse(self):
        assert Stain.parse("tri") is Stain.TRI and Stain.parse("PASD") is Stain.PASD

    def test_duplicate_patient_rows(self, tmp_path):
        path = tmp_path / "p.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "baseline_egfr", "egfr_12mo"])
            w.writerow(["A", 50, 40])
            w.writerow(["A", 51, 41])
        with pytest.raises(DataError, match="duplicate"):
            read_patients(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("patient_id,baseline_egfr\nA,50\n")
        with pytest.raises(DataError, match="missing"):
            read_patients(path)
