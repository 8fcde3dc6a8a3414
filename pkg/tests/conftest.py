"""Shared fixtures. Thread pinning must happen before numpy loads BLAS."""

import os

for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(_var, "1")

import json

import pytest

from progkit.synth import SynthConfig, make_synthetic_cohort


@pytest.fixture(scope="session")
def mini_cohort(tmp_path_factory):
    """A 20-patient synthetic cohort shared by the pipeline-level tests."""
    root = tmp_path_factory.mktemp("cohort")
    ids = make_synthetic_cohort(str(root), SynthConfig(n_patients=20, seed=11))
    return {"root": str(root), "ids": ids}


def pipeline_config(cohort: dict, out_dir: str, **extra) -> str:
    """Write a mini-scale pipeline config JSON; returns its path."""
    root = cohort["root"]
    cfg = {
        "image_dir": os.path.join(root, "images"),
        "masks_dir": os.path.join(root, "masks"),
        "pred_masks_dir": os.path.join(root, "pred_masks"),
        "ehr_csv": os.path.join(root, "ehr.csv"),
        "out_dir": out_dir,
        "val_frac": 0.2,
        "fine_spacing_mm": 4.0,
        "patch_size": [16, 16, 16],
        "epochs": 3,
        "batch_size": 8,
        "time_bins": 5,
        "workers": 1,
        "survival_features": "desc_pet_mean,desc_n_tumours,zubrod,age",
    }
    cfg.update(extra)
    path = os.path.join(out_dir, "config.json")
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=1)
    return path
