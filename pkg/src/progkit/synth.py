"""Synthetic PET/CT phantom cohorts with known ground truth.

Each patient is a flat-topped head cylinder on a neck and torso, with a hot
brain sphere, an optional very hot bladder far below the head (a distractor
for the landmark window rule), and a large hot primary tumour plus 0-2
small cool nodes in the head-and-neck region. Survival times follow a
Weibull model planted on the primary uptake and tumour count plus weak EHR
effects, so the generated cohort has a recoverable signal. Ground truth
(landmarks, tumour geometry, model parameters) is written alongside the
volumes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .nifti import save_nifti
from .volume import Modality, Volume

EHR_COLUMNS: tuple[str, ...] = (
    "age",
    "gender",
    "weight",
    "alcohol",
    "tobacco",
    "hpv",
    "zubrod",
    "surgery",
    "chemotherapy",
)


@dataclass(frozen=True)
class SynthConfig:
    """Phantom generator settings."""

    n_patients: int = 20
    seed: int = 0
    spacing_mm: tuple[float, float, float] = (4.0, 4.0, 4.0)
    grid: tuple[int, int, int] = (170, 56, 56)
    centres: tuple[str, ...] = ("CHA", "CHB", "CHM")
    censor_frac: float = 0.3
    rho: float = 1.5
    beta0: float = 3.2
    beta_uptake: float = -0.5
    beta_ntum: float = -0.4
    beta_zubrod: float = -0.15
    beta_age: float = -0.1
    bladder_prob: float = 0.5
    spurious_prob: float = 0.4
    missing_prob: float = 0.15
    volumes: bool = True

    def __post_init__(self) -> None:
        if self.n_patients < 1:
            raise ValueError("n_patients must be at least 1")
        if not 0 <= self.censor_frac < 1:
            raise ValueError(f"censor_frac must lie in [0, 1), got {self.censor_frac}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.centres:
            raise ValueError("at least one centre name is required")


@dataclass
class PatientTruth:
    patient_id: str
    head_top_mm: float
    box_z_mm: tuple[float, float]
    n_tumours: int
    tumours: list[dict] = field(default_factory=list)
    eta: float = 0.0
    time: float = 0.0
    event: int = 1


# Tissue and uptake constants. The bladder is deliberately hotter than the
# brain so only the bounded landmark window keeps the brain detection right.
_CT_AIR = -1000.0
_CT_SOFT = 40.0
_CT_TUMOUR = 70.0
_PET_BODY = 2.0
_PET_BRAIN = 20.0
_PET_BLADDER = 40.0

_HEAD_RADIUS = 70.0
_HEAD_LENGTH = 150.0
_NECK_RADIUS = 30.0
_NECK_LENGTH = 80.0
_TORSO_RY = 95.0
_TORSO_RX = 100.0
_BRAIN_RADIUS = 35.0
_BRAIN_DEPTH = 70.0  # below head top
_BLADDER_RADIUS = 30.0
_BLADDER_DEPTH = 420.0  # below head top; beyond the 250 mm brain window


def _coordinate_grids(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sp = np.asarray(cfg.spacing_mm)
    dims = cfg.grid
    axes = [sp[a] * (np.arange(dims[a]) + 0.5) for a in range(3)]
    return (
        axes[0][:, None, None],
        axes[1][None, :, None],
        axes[2][None, None, :],
    )


def _phantom_volumes(
    cfg: SynthConfig, rng: np.random.Generator, truth: PatientTruth
) -> tuple[Volume, Volume, Volume, Volume]:
    """Build (ct, pet, semantic mask, binary mask with spurious blobs)."""
    zz, yy, xx = _coordinate_grids(cfg)
    sp = np.asarray(cfg.spacing_mm)
    origin = sp / 2.0
    cy = float(cfg.grid[1] * sp[1] / 2.0)
    cx = float(cfg.grid[2] * sp[2] / 2.0)
    z_top = truth.head_top_mm
    r2_plane = (yy - cy) ** 2 + (xx - cx) ** 2

    head = (zz >= z_top) & (zz < z_top + _HEAD_LENGTH) & (r2_plane <= _HEAD_RADIUS**2)
    neck_lo = z_top + _HEAD_LENGTH
    neck = (zz >= neck_lo) & (zz < neck_lo + _NECK_LENGTH) & (r2_plane <= _NECK_RADIUS**2)
    torso_lo = neck_lo + _NECK_LENGTH
    torso = (zz >= torso_lo) & (
        ((yy - cy) / _TORSO_RY) ** 2 + ((xx - cx) / _TORSO_RX) ** 2 <= 1.0
    )
    body = head | neck | torso

    ct = np.full(cfg.grid, _CT_AIR)
    ct[body] = _CT_SOFT + rng.normal(0.0, 10.0, size=int(body.sum()))

    pet = np.zeros(cfg.grid)
    pet[body] = _PET_BODY + rng.normal(0.0, 0.05, size=int(body.sum()))

    brain = (
        (zz - (z_top + _BRAIN_DEPTH)) ** 2 + r2_plane <= _BRAIN_RADIUS**2
    )
    pet[brain & body] = _PET_BRAIN
    if rng.random() < cfg.bladder_prob:
        bladder = (zz - (z_top + _BLADDER_DEPTH)) ** 2 + r2_plane <= _BLADDER_RADIUS**2
        pet[bladder & body] = _PET_BLADDER

    mask = np.zeros(cfg.grid)
    for tumour in truth.tumours:
        tz, ty, tx = tumour["center_mm"]
        rz, ry, rx = tumour["radii_mm"]
        ell = (
            ((zz - tz) / rz) ** 2 + ((yy - ty) / ry) ** 2 + ((xx - tx) / rx) ** 2 <= 1.0
        )
        pet[ell] = tumour["uptake"]
        ct[ell] = _CT_TUMOUR
        mask[ell] = float(tumour["label"])

    binary = (mask > 0).astype(np.float64)
    if rng.random() < cfg.spurious_prob:
        for _ in range(int(rng.integers(1, 3))):
            for _attempt in range(20):
                sz = z_top + rng.uniform(20.0, _HEAD_LENGTH + _NECK_LENGTH - 20.0)
                sy = cy + rng.uniform(-20.0, 20.0)
                sx = cx + rng.uniform(-20.0, 20.0)
                sr = rng.uniform(5.0, 9.0)
                blob = (zz - sz) ** 2 + (yy - sy) ** 2 + (xx - sx) ** 2 <= sr**2
                if not np.any(blob & (mask > 0)) and np.any(blob):
                    binary[blob] = 1.0
                    break

    def vol(data: np.ndarray, modality: Modality) -> Volume:
        return Volume(
            data=data.astype(np.float32),
            spacing_mm=sp,
            origin_mm=origin,
            modality=modality,
        )

    return (
        vol(ct, Modality.CT),
        vol(pet, Modality.PET),
        vol(np.round(mask), Modality.MASK),
        vol(np.round(binary), Modality.MASK),
    )


def _sample_tumours(cfg: SynthConfig, rng: np.random.Generator, z_top: float) -> list[dict]:
    """One large hot primary (class 1) plus 0-2 small cool nodes (class 2).

    The size and uptake gap between the classes is what makes the typing
    classifier learnable. Centres stay inside the head cylinder; occasional
    overlap with the brain sphere only carves its uptake and never confuses
    the landmarks.
    """
    sp = np.asarray(cfg.spacing_mm)
    cy = float(cfg.grid[1] * sp[1] / 2.0)
    cx = float(cfg.grid[2] * sp[2] / 2.0)
    n_nodes = int(rng.integers(0, 3))
    tumours: list[dict] = []
    attempts = 0
    while len(tumours) < 1 + n_nodes and attempts < 300:
        attempts += 1
        primary = not tumours
        center = np.array(
            [
                z_top + rng.uniform(95.0, 140.0),
                cy + rng.uniform(-26.0, 26.0),
                cx + rng.uniform(-26.0, 26.0),
            ]
        )
        if primary:
            radii = rng.uniform(12.0, 16.0, size=3)
            uptake = float(rng.uniform(8.0, 11.0))
        else:
            radii = rng.uniform(6.0, 9.0, size=3)
            uptake = float(rng.uniform(3.5, 5.5))
        ok = True
        for other in tumours:
            gap = np.linalg.norm(center - np.asarray(other["center_mm"]))
            if gap < radii.max() + max(other["radii_mm"]) + 8.0:
                ok = False
                break
        if ok:
            tumours.append(
                {
                    "center_mm": [float(v) for v in center],
                    "radii_mm": [float(v) for v in radii],
                    "uptake": uptake,
                    "label": 1 if primary else 2,
                }
            )
    return tumours


def make_synthetic_cohort(out_dir: str, cfg: SynthConfig) -> list[str]:
    """Generate a phantom cohort under out_dir; returns the patient ids.

    Layout: images/{id}_ct.nii.gz and {id}_pet.nii.gz, masks/{id}_mask.nii.gz
    (labels 0/1/2), pred_masks/{id}_mask.nii.gz (binary, with occasional
    spurious blobs), ehr.csv (covariates plus time/event) and truth.json.
    With cfg.volumes False only the tabular outputs are written.
    """
    rng = np.random.default_rng(cfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    if cfg.volumes:
        for sub in ("images", "masks", "pred_masks"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    ids = [
        f"{cfg.centres[i % len(cfg.centres)]}-{i:03d}" for i in range(cfg.n_patients)
    ]
    ehr_rows = []
    truths: list[PatientTruth] = []
    for pid in ids:
        z_top = float(rng.uniform(40.0, 80.0))
        tumours = _sample_tumours(cfg, rng, z_top)
        truth = PatientTruth(
            patient_id=pid,
            head_top_mm=z_top,
            box_z_mm=(z_top, z_top + 440.0),
            n_tumours=len(tumours),
            tumours=tumours,
        )

        age = float(rng.normal(60.0, 10.0))
        zubrod = int(rng.integers(0, 4))
        ehr = {
            "patient_id": pid,
            "age": round(age, 1),
            "gender": int(rng.integers(0, 2)),
            "weight": round(float(rng.normal(80.0, 15.0)), 1),
            "alcohol": int(rng.integers(0, 2)),
            "tobacco": int(rng.integers(0, 2)),
            "hpv": int(rng.integers(0, 2)),
            "zubrod": zubrod,
            "surgery": int(rng.integers(0, 2)),
            "chemotherapy": int(rng.integers(0, 2)),
        }

        primary_uptake = float(tumours[0]["uptake"]) if tumours else 9.5
        eta = (
            cfg.beta0
            + cfg.beta_uptake * (primary_uptake - 9.5)
            + cfg.beta_ntum * (len(tumours) - 2.0)
            + cfg.beta_zubrod * (zubrod - 1.0)
            + cfg.beta_age * (age - 60.0) / 10.0
        )
        lam = float(np.exp(eta))
        t_event = lam * rng.exponential() ** (1.0 / cfg.rho)
        if cfg.censor_frac > 0:
            a = cfg.censor_frac / (1.0 - cfg.censor_frac)
            lam_c = lam * a ** (-1.0 / cfg.rho)
            t_cens = lam_c * rng.exponential() ** (1.0 / cfg.rho)
        else:
            t_cens = np.inf
        truth.eta = float(eta)
        truth.event = int(t_event <= t_cens)
        truth.time = float(max(min(t_event, t_cens), 1e-3))

        # Plant missing cells in the lifestyle covariates.
        for col in ("alcohol", "tobacco", "hpv", "surgery"):
            if rng.random() < cfg.missing_prob:
                ehr[col] = np.nan
        ehr["time"] = round(truth.time, 4)
        ehr["event"] = truth.event
        ehr_rows.append(ehr)
        truths.append(truth)

        if cfg.volumes:
            ct, pet, mask, binary = _phantom_volumes(cfg, rng, truth)
            save_nifti(ct, os.path.join(out_dir, "images", f"{pid}_ct.nii.gz"))
            save_nifti(pet, os.path.join(out_dir, "images", f"{pid}_pet.nii.gz"))
            save_nifti(mask, os.path.join(out_dir, "masks", f"{pid}_mask.nii.gz"))
            save_nifti(binary, os.path.join(out_dir, "pred_masks", f"{pid}_mask.nii.gz"))

    frame = pd.DataFrame(ehr_rows, columns=("patient_id",) + EHR_COLUMNS + ("time", "event"))
    frame.to_csv(os.path.join(out_dir, "ehr.csv"), index=False)

    doc = {
        "config": {
            "n_patients": cfg.n_patients,
            "seed": cfg.seed,
            "spacing_mm": list(cfg.spacing_mm),
            "grid": list(cfg.grid),
            "censor_frac": cfg.censor_frac,
            "rho": cfg.rho,
            "beta0": cfg.beta0,
            "beta_uptake": cfg.beta_uptake,
            "beta_ntum": cfg.beta_ntum,
            "beta_zubrod": cfg.beta_zubrod,
            "beta_age": cfg.beta_age,
        },
        "patients": {
            t.patient_id: {
                "head_top_mm": t.head_top_mm,
                "box_z_mm": list(t.box_z_mm),
                "n_tumours": t.n_tumours,
                "tumours": t.tumours,
                "eta": t.eta,
                "time": t.time,
                "event": t.event,
            }
            for t in truths
        },
    }
    with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return ids
