"""Phantom cohort generator: layout, ground-truth consistency, determinism."""

import filecmp
import json
import os

import numpy as np
import pandas as pd
import pytest

from progkit.nifti import load_nifti
from progkit.synth import EHR_COLUMNS, SynthConfig, make_synthetic_cohort
from progkit.volume import Modality

LIFESTYLE = ("alcohol", "tobacco", "hpv", "surgery")


def tabular_cfg(**kw):
    kw.setdefault("volumes", False)
    return SynthConfig(**kw)


def read_truth(out_dir):
    with open(os.path.join(out_dir, "truth.json"), encoding="utf-8") as fh:
        return json.load(fh)


class TestSynthConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="n_patients"):
            SynthConfig(n_patients=0)
        with pytest.raises(ValueError, match="censor_frac"):
            SynthConfig(censor_frac=1.0)
        with pytest.raises(ValueError, match="rho"):
            SynthConfig(rho=0.0)
        with pytest.raises(ValueError, match="centre"):
            SynthConfig(centres=())


class TestTabular:
    def test_ids_cycle_centres(self, tmp_path):
        ids = make_synthetic_cohort(str(tmp_path / "c"), tabular_cfg(n_patients=5, seed=0))
        assert ids == ["CHA-000", "CHB-001", "CHM-002", "CHA-003", "CHB-004"]

    def test_ehr_layout(self, tmp_path):
        out = str(tmp_path / "c")
        ids = make_synthetic_cohort(out, tabular_cfg(n_patients=12, seed=1))
        frame = pd.read_csv(os.path.join(out, "ehr.csv"))
        assert list(frame.columns) == ["patient_id", *EHR_COLUMNS, "time", "event"]
        assert list(frame["patient_id"]) == ids
        assert (frame["time"] > 0).all()
        assert set(frame["event"]) <= {0, 1}

    def test_truth_structure(self, tmp_path):
        out = str(tmp_path / "c")
        ids = make_synthetic_cohort(out, tabular_cfg(n_patients=15, seed=2))
        truth = read_truth(out)
        assert sorted(truth["patients"]) == sorted(ids)
        for entry in truth["patients"].values():
            assert 40.0 <= entry["head_top_mm"] <= 80.0
            assert entry["box_z_mm"] == [entry["head_top_mm"], entry["head_top_mm"] + 440.0]
            assert 1 <= entry["n_tumours"] <= 3
            assert entry["n_tumours"] == len(entry["tumours"])
            primary = entry["tumours"][0]
            assert primary["label"] == 1
            assert all(12.0 <= r <= 16.0 for r in primary["radii_mm"])
            assert 8.0 <= primary["uptake"] <= 11.0
            for node in entry["tumours"][1:]:
                assert node["label"] == 2
                assert all(6.0 <= r <= 9.0 for r in node["radii_mm"])
                assert 3.5 <= node["uptake"] <= 5.5

    def test_planted_linear_predictor(self, tmp_path):
        # eta must be reproducible from the written covariates and tumour
        # truth; the only slack is the age column rounded to 0.1 years.
        out = str(tmp_path / "c")
        cfg = tabular_cfg(n_patients=30, seed=3)
        make_synthetic_cohort(out, cfg)
        truth = read_truth(out)
        frame = pd.read_csv(os.path.join(out, "ehr.csv")).set_index("patient_id")
        for pid, entry in truth["patients"].items():
            row = frame.loc[pid]
            eta = (
                cfg.beta0
                + cfg.beta_uptake * (entry["tumours"][0]["uptake"] - 9.5)
                + cfg.beta_ntum * (entry["n_tumours"] - 2.0)
                + cfg.beta_zubrod * (row["zubrod"] - 1.0)
                + cfg.beta_age * (row["age"] - 60.0) / 10.0
            )
            assert eta == pytest.approx(entry["eta"], abs=1e-3)
            assert row["time"] == pytest.approx(entry["time"], abs=1e-3)
            assert int(row["event"]) == entry["event"]

    def test_missing_cells_planted(self, tmp_path):
        out = str(tmp_path / "m")
        make_synthetic_cohort(out, tabular_cfg(n_patients=40, seed=4, missing_prob=0.5))
        frame = pd.read_csv(os.path.join(out, "ehr.csv"))
        assert frame[list(LIFESTYLE)].isna().sum().sum() > 0
        other = [c for c in frame.columns if c not in LIFESTYLE]
        assert not frame[other].isna().any().any()

    def test_no_missing_when_disabled(self, tmp_path):
        out = str(tmp_path / "m0")
        make_synthetic_cohort(out, tabular_cfg(n_patients=20, seed=5, missing_prob=0.0))
        assert not pd.read_csv(os.path.join(out, "ehr.csv")).isna().any().any()

    def test_censor_fraction(self, tmp_path):
        out = str(tmp_path / "cf")
        make_synthetic_cohort(out, tabular_cfg(n_patients=400, seed=6, censor_frac=0.3))
        frame = pd.read_csv(os.path.join(out, "ehr.csv"))
        assert 1.0 - frame["event"].mean() == pytest.approx(0.3, abs=0.06)

    def test_zero_censoring(self, tmp_path):
        out = str(tmp_path / "cf0")
        make_synthetic_cohort(out, tabular_cfg(n_patients=25, seed=7, censor_frac=0.0))
        assert (pd.read_csv(os.path.join(out, "ehr.csv"))["event"] == 1).all()

    def test_tabular_determinism(self, tmp_path):
        cfg = tabular_cfg(n_patients=10, seed=8)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        make_synthetic_cohort(a, cfg)
        make_synthetic_cohort(b, cfg)
        for name in ("ehr.csv", "truth.json"):
            assert filecmp.cmp(os.path.join(a, name), os.path.join(b, name), shallow=False)
        c = str(tmp_path / "c")
        make_synthetic_cohort(c, tabular_cfg(n_patients=10, seed=9))
        assert not filecmp.cmp(os.path.join(a, "ehr.csv"), os.path.join(c, "ehr.csv"), shallow=False)


class TestVolumes:
    def test_cohort_layout(self, tmp_path):
        out = str(tmp_path / "v")
        ids = make_synthetic_cohort(out, SynthConfig(n_patients=2, seed=10))
        for pid in ids:
            for rel in (
                f"images/{pid}_ct.nii.gz",
                f"images/{pid}_pet.nii.gz",
                f"masks/{pid}_mask.nii.gz",
                f"pred_masks/{pid}_mask.nii.gz",
            ):
                assert os.path.exists(os.path.join(out, rel)), rel

    def test_volumes_match_truth(self, tmp_path):
        # Re-rasterize every tumour ellipsoid from truth.json over the
        # voxel-centre grid and demand an exact mask match.
        out = str(tmp_path / "v")
        cfg = SynthConfig(n_patients=3, seed=11)
        ids = make_synthetic_cohort(out, cfg)
        truth = read_truth(out)
        sp = np.asarray(cfg.spacing_mm)
        zz = (sp[0] * (np.arange(cfg.grid[0]) + 0.5))[:, None, None]
        yy = (sp[1] * (np.arange(cfg.grid[1]) + 0.5))[None, :, None]
        xx = (sp[2] * (np.arange(cfg.grid[2]) + 0.5))[None, None, :]
        for pid in ids:
            entry = truth["patients"][pid]
            ct = load_nifti(os.path.join(out, "images", f"{pid}_ct.nii.gz"), Modality.CT)
            pet = load_nifti(os.path.join(out, "images", f"{pid}_pet.nii.gz"), Modality.PET)
            mask = load_nifti(os.path.join(out, "masks", f"{pid}_mask.nii.gz"), Modality.MASK)
            binary = load_nifti(os.path.join(out, "pred_masks", f"{pid}_mask.nii.gz"), Modality.MASK)

            expected = np.zeros(cfg.grid, dtype=np.float32)
            for tum in entry["tumours"]:
                tz, ty, tx = tum["center_mm"]
                rz, ry, rx = tum["radii_mm"]
                ell = ((zz - tz) / rz) ** 2 + ((yy - ty) / ry) ** 2 + ((xx - tx) / rx) ** 2 <= 1.0
                expected[ell] = tum["label"]
                assert np.allclose(pet.data[ell], tum["uptake"], atol=1e-3)
                assert np.allclose(ct.data[ell], 70.0, atol=1e-3)
            assert np.array_equal(mask.data, expected)

            # The binary mask covers every true tumour voxel; anything extra
            # is a spurious blob, never an erased tumour.
            assert np.all(binary.data[mask.data > 0] == 1.0)
            assert set(np.unique(binary.data)) <= {0.0, 1.0}
            assert ct.data.min() == -1000.0
            peak = float(pet.data.max())
            assert abs(peak - 20.0) < 0.5 or abs(peak - 40.0) < 0.5

    def test_volume_determinism(self, tmp_path):
        cfg = SynthConfig(n_patients=2, seed=12)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        ids = make_synthetic_cohort(a, cfg)
        make_synthetic_cohort(b, cfg)
        pid = ids[0]
        for rel in (
            "ehr.csv",
            "truth.json",
            f"images/{pid}_ct.nii.gz",
            f"images/{pid}_pet.nii.gz",
            f"masks/{pid}_mask.nii.gz",
            f"pred_masks/{pid}_mask.nii.gz",
        ):
            assert filecmp.cmp(os.path.join(a, rel), os.path.join(b, rel), shallow=False), rel
