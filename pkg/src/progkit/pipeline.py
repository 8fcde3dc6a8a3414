"""End-to-end prognosis pipeline: stages, reports and orchestration.

Stages communicate exclusively through files under the output directory, so
any stage can run standalone once its predecessors have produced their
artifacts. All outputs are deterministic for a fixed configuration: JSON
keys are sorted, CSV column order is pinned, gzip streams carry no
timestamps, and parallel per-patient work is reduced in sorted id order.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, ProgkitError, StageError
from .localize import axial_profile, detect_landmarks, roi_box
from .morphology import (
    CALIBRATED_FEATURE_NAMES,
    REGION_FEATURE_NAMES,
    RegionFeatures,
    connected_components,
    patient_feature_vector,
    region_descriptors,
    select_calibrated_features,
)
from .mtlr import make_time_bins
from .nifti import load_nifti, save_nifti
from .nnet import DeepFusionModel, MultiPatchModel, TumorGraph
from .survival import (
    CohortTable,
    calibration_sweep,
    coefficient_significance,
    cohort_from_csv,
    cohort_to_csv,
    concordance_index,
    fit_cox_ph,
    fit_weibull_aft,
    impute_missing,
    predict_risk,
)
from .svm import (
    SvmConfig,
    f1_scores,
    label_components_by_overlap,
    relabel_segmentation,
    save_model,
    svm_predict,
    svm_train,
)
from .training import (
    GraphSample,
    TrainConfig,
    ensemble_risk,
    predict_risks,
    save_checkpoint,
    train_model,
)
from .volume import (
    BoxMM,
    Modality,
    Volume,
    crop_mm,
    extract_patch,
    fuse_average,
    resample,
    window_clip,
    znormalize,
)

STAGE_ORDER: tuple[str, ...] = (
    "localize",
    "features",
    "classify",
    "survival",
    "neural",
    "ensemble",
    "evaluate",
)

SEED_ENV_VAR = "PROGKIT_SEED"


@dataclass
class PipelineConfig:
    """Flat pipeline configuration; JSON files use the same field names."""

    image_dir: str = ""
    masks_dir: str = ""
    pred_masks_dir: str = ""
    ehr_csv: str = ""
    out_dir: str = "out"
    stages: tuple[str, ...] = STAGE_ORDER
    seed_split: int = 17
    seed_svm: int = 23
    seed_neural: int = 31
    val_frac: float = 0.15
    workers: int = 0  # 0 means one thread per logical core
    coarse_spacing_mm: float = 7.0
    fine_spacing_mm: float = 1.0
    ct_clip: tuple[float, float] = (-1024.0, 1024.0)
    ct_window: tuple[float, float] = (-200.0, 200.0)
    roi_size_mm: float = 440.0
    head_frac: float = 0.05
    patch_size: tuple[int, int, int] = (32, 32, 32)
    df_patch_size: tuple[int, int, int] = (50, 80, 80)
    model: str = "multi_patch"
    epochs: int = 100
    lr: float = 0.016
    batch_size: int = 16
    time_bins: int = 0  # 0 means ceil(sqrt(#events))
    early_stop_cindex: float = 0.0  # 0 disables early stopping
    ensemble_mode: str = "zscore_mean"
    svm_c: float = 1.0
    svm_standardize: bool = True
    emit_profiles: bool = False
    # Covariates for the primary Weibull/Cox fits: "ehr", "desc",
    # "ehr+desc", or an explicit comma-separated column list. Small
    # cohorts need a narrower set than the full default.
    survival_features: str = "ehr+desc"

    def validate(self) -> None:
        if not self.ehr_csv:
            raise ConfigError("ehr_csv must be set")
        if not self.out_dir:
            raise ConfigError("out_dir must be set")
        unknown = [s for s in self.stages if s not in STAGE_ORDER]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; valid stages are {list(STAGE_ORDER)}")
        if not 0 < self.val_frac < 1:
            raise ConfigError(f"val_frac must lie in (0, 1), got {self.val_frac}")
        if self.model not in ("multi_patch", "deep_fusion"):
            raise ConfigError(f"model must be multi_patch or deep_fusion, got {self.model!r}")
        if self.ensemble_mode not in ("zscore_mean", "raw_mean"):
            raise ConfigError(f"ensemble_mode must be zscore_mean or raw_mean, got {self.ensemble_mode!r}")
        if self.coarse_spacing_mm <= 0 or self.fine_spacing_mm <= 0:
            raise ConfigError("spacings must be positive")
        if not self.ct_clip[0] < self.ct_clip[1] or not self.ct_window[0] < self.ct_window[1]:
            raise ConfigError("ct_clip and ct_window must be (lo, hi) with lo < hi")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs and batch_size must be >= 1 and lr positive")
        if self.workers < 0:
            raise ConfigError(f"workers must be >= 0, got {self.workers}")
        needs_images = set(self.stages) & {"localize", "features", "classify", "neural", "evaluate"}
        if needs_images and not self.image_dir:
            raise ConfigError(f"image_dir must be set for stages {sorted(needs_images)}")
        if needs_images and not self.masks_dir:
            raise ConfigError(f"masks_dir must be set for stages {sorted(needs_images)}")

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _coerce_field(name: str, value, template) -> object:
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise ConfigError(f"config field {name!r} expects a boolean, got {value!r}")
    if isinstance(template, int) and not isinstance(template, bool):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config field {name!r} expects an integer, got {value!r}") from None
    if isinstance(template, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config field {name!r} expects a number, got {value!r}") from None
    if isinstance(template, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config field {name!r} expects a list, got {value!r}")
        kind = type(template[0]) if template else str
        try:
            return tuple(kind(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"config field {name!r} has malformed entries: {value!r}") from None
    return str(value)


def load_config(path: str | None, overrides: dict[str, object] | None = None) -> PipelineConfig:
    """Build a config from a JSON file plus dotted key=value overrides.

    The PROGKIT_SEED environment variable, when set, overrides every seed
    field last. Unknown keys raise ConfigError naming the key.
    """
    cfg = PipelineConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    updates: dict[str, object] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        updates.update(doc)
    if overrides:
        updates.update(overrides)

    for key, value in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _coerce_field(key, value, known[key])

    cfg = replace(cfg, **updates)

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
        cfg = replace(cfg, seed_split=seed, seed_svm=seed + 1, seed_neural=seed + 2)

    cfg.validate()
    return cfg


def split_cohort(ids: list[str], val_frac: float, seed: int) -> dict[str, str]:
    """Per-centre train/validation split with largest-remainder rounding.

    The centre is the id prefix before the first '-'. Validation counts hit
    round(val_frac * N) exactly while staying within one patient of the
    per-centre proportion. Malformed ids raise DataError listing them.
    """
    if not ids:
        raise DataError("cannot split an empty cohort")
    if not 0 < val_frac < 1:
        raise ValueError(f"val_frac must lie in (0, 1), got {val_frac}")
    if len(set(ids)) != len(ids):
        raise DataError("cohort ids contain duplicates")
    bad = [pid for pid in ids if "-" not in pid or not pid.split("-")[0] or not pid.split("-", 1)[1]]
    if bad:
        raise DataError(f"malformed patient ids (expected CENTRE-SUFFIX): {sorted(bad)}")

    centres: dict[str, list[str]] = {}
    for pid in ids:
        centres.setdefault(pid.split("-")[0], []).append(pid)

    target = int(round(val_frac * len(ids)))
    names = sorted(centres)
    base = {c: int(math.floor(val_frac * len(centres[c]))) for c in names}
    remainder = {c: val_frac * len(centres[c]) - base[c] for c in names}
    extras = target - sum(base.values())
    ranked = sorted(names, key=lambda c: (-remainder[c], c))
    counts = dict(base)
    for c in ranked[: max(extras, 0)]:
        counts[c] += 1

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for c in names:
        members = sorted(centres[c])
        order = rng.permutation(len(members))
        chosen = {members[k] for k in order[: counts[c]]}
        for pid in members:
            assignment[pid] = "validation" if pid in chosen else "train"
    return assignment


def dice_scores(
    predicted: list[Volume], truth: list[Volume], classes: tuple[int, ...] = (1, 2)
) -> dict[str, float]:
    """Aggregated Dice per class: ratio of summed intersections to sums.

    Classes absent from every predicted and truth volume score 1.0. The
    aggregate is the mean over the requested classes.
    """
    if len(predicted) != len(truth):
        raise ValueError(f"predicted ({len(predicted)}) and truth ({len(truth)}) counts differ")
    if not predicted:
        raise ValueError("dice_scores needs at least one volume pair")
    inter = {c: 0 for c in classes}
    total = {c: 0 for c in classes}
    for p, t in zip(predicted, truth):
        if p.shape != t.shape:
            raise ValueError(f"volume shapes differ: {p.shape} vs {t.shape}")
        for c in classes:
            pc = p.data == c
            tc = t.data == c
            inter[c] += int(np.count_nonzero(pc & tc))
            total[c] += int(np.count_nonzero(pc)) + int(np.count_nonzero(tc))
    out = {}
    for c in classes:
        out[f"dice_{c}"] = (2.0 * inter[c] / total[c]) if total[c] else 1.0
    out["aggregated"] = float(np.mean([out[f"dice_{c}"] for c in classes]))
    return out


# ---------------------------------------------------------------------------
# Stage plumbing


def _write_json(doc: dict, path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _read_json(path: str, what: str) -> dict:
    if not os.path.exists(path):
        raise DataError(f"{what} not found at {path}; run the producing stage first")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _discover_patients(cfg: PipelineConfig) -> list[str]:
    if not os.path.isdir(cfg.image_dir):
        raise DataError(f"image directory not found: {cfg.image_dir}")
    ids = sorted(
        name[: -len("_ct.nii.gz")]
        for name in os.listdir(cfg.image_dir)
        if name.endswith("_ct.nii.gz")
    )
    if not ids:
        raise DataError(f"no *_ct.nii.gz images found in {cfg.image_dir}")
    missing = [pid for pid in ids if not os.path.exists(os.path.join(cfg.image_dir, f"{pid}_pet.nii.gz"))]
    if missing:
        raise DataError(f"missing PET images for patients: {missing}")
    return ids


def _mask_source_dir(cfg: PipelineConfig) -> str:
    if cfg.pred_masks_dir:
        if not os.path.isdir(cfg.pred_masks_dir):
            raise DataError(f"pred_masks directory not found: {cfg.pred_masks_dir}")
        return cfg.pred_masks_dir
    if not os.path.isdir(cfg.masks_dir):
        raise DataError(f"masks directory not found: {cfg.masks_dir}")
    return cfg.masks_dir


def _parallel_map(cfg: PipelineConfig, fn, ids: list[str]) -> dict[str, object]:
    """Apply fn to each patient id; results keyed by id, errors re-raised."""
    workers = cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)
    results: dict[str, object] = {}
    if workers == 1:
        for pid in ids:
            results[pid] = fn(pid)
        return results
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pid: pool.submit(fn, pid) for pid in ids}
        for pid in ids:
            results[pid] = futures[pid].result()
    return results


def ensure_split(cfg: PipelineConfig) -> dict[str, str]:
    """Load the split assignment, creating it from the EHR ids if absent."""
    path = os.path.join(cfg.out_dir, "split.json")
    if os.path.exists(path):
        return _read_json(path, "split assignment")
    if not os.path.exists(cfg.ehr_csv):
        raise DataError(f"EHR CSV not found: {cfg.ehr_csv}")
    table = cohort_from_csv(cfg.ehr_csv)
    assignment = split_cohort(table.ids, cfg.val_frac, cfg.seed_split)
    _write_json(assignment, path)
    return assignment


def _load_box(doc: dict, pid: str) -> BoxMM:
    entry = doc.get(pid)
    if entry is None:
        raise DataError(f"no localization box for patient {pid}; run the localize stage")
    return BoxMM(
        min_corner_mm=np.asarray(entry["box"]["min_corner_mm"]),
        size_mm=np.asarray(entry["box"]["size_mm"]),
    )


def _fine_volumes(
    cfg: PipelineConfig, pid: str, box: BoxMM, mask_dir: str | None
) -> dict[str, Volume]:
    """Clip, crop and resample one patient onto the fine isotropic grid."""
    fine = np.full(3, cfg.fine_spacing_mm)
    ct = load_nifti(os.path.join(cfg.image_dir, f"{pid}_ct.nii.gz"), Modality.CT)
    pet = load_nifti(os.path.join(cfg.image_dir, f"{pid}_pet.nii.gz"), Modality.PET)
    ct = window_clip(ct, *cfg.ct_clip)
    ct_fine = window_clip(resample(crop_mm(ct, box), fine, "linear"), *cfg.ct_window)
    pet_fine = resample(crop_mm(pet, box), fine, "linear")
    out = {"ct": ct_fine, "pet": pet_fine}
    if mask_dir is not None:
        mask = load_nifti(os.path.join(mask_dir, f"{pid}_mask.nii.gz"), Modality.MASK)
        out["mask"] = resample(crop_mm(mask, box, pad_value=0.0), fine, "nearest")
    return out


# ---------------------------------------------------------------------------
# Stages


def stage_localize(cfg: PipelineConfig) -> dict:
    ids = _discover_patients(cfg)
    coarse = np.full(3, cfg.coarse_spacing_mm)

    def one(pid: str):
        ct = load_nifti(os.path.join(cfg.image_dir, f"{pid}_ct.nii.gz"), Modality.CT)
        pet = load_nifti(os.path.join(cfg.image_dir, f"{pid}_pet.nii.gz"), Modality.PET)
        ct_c = resample(window_clip(ct, *cfg.ct_clip), coarse, "linear")
        pet_c = resample(pet, coarse, "linear")
        lm = detect_landmarks(pet_c, ct_c, frac=cfg.head_frac)
        box = roi_box(pet_c, lm, cfg.roi_size_mm)
        profiles = None
        if cfg.emit_profiles:
            pp = axial_profile(pet_c)
            cp = axial_profile(ct_c)
            profiles = pd.DataFrame(
                {"z_mm": pp.z_coords_mm, "pet_mean": pp.values, "ct_mean": cp.values}
            )
        return lm, box, profiles

    results = _parallel_map(cfg, one, ids)
    doc = {}
    for pid in sorted(results):
        lm, box, profiles = results[pid]
        doc[pid] = {
            "landmarks": {
                "head_top_mm": lm.head_top_mm,
                "brain_peak_mm": lm.brain_peak_mm,
                "neck_drop_mm": lm.neck_drop_mm,
            },
            "box": {
                "min_corner_mm": [float(v) for v in box.min_corner_mm],
                "size_mm": [float(v) for v in box.size_mm],
            },
        }
        if profiles is not None:
            pdir = os.path.join(cfg.out_dir, "localize", "profiles")
            os.makedirs(pdir, exist_ok=True)
            profiles.to_csv(os.path.join(pdir, f"{pid}.csv"), index=False)
    _write_json(doc, os.path.join(cfg.out_dir, "localize", "boxes.json"))
    return {"patients": len(ids)}


def stage_features(cfg: PipelineConfig) -> dict:
    boxes = _read_json(os.path.join(cfg.out_dir, "localize", "boxes.json"), "localization boxes")
    ids = _discover_patients(cfg)
    source_dir = _mask_source_dir(cfg)
    truth_dir = cfg.masks_dir

    def one(pid: str):
        box = _load_box(boxes, pid)
        vols = _fine_volumes(cfg, pid, box, source_dir)
        components, n = connected_components(vols["mask"], connectivity=26)
        truth_mask = load_nifti(os.path.join(truth_dir, f"{pid}_mask.nii.gz"), Modality.MASK)
        truth_fine = resample(crop_mm(truth_mask, box, pad_value=0.0), np.full(3, cfg.fine_spacing_mm), "nearest")
        truth_labels = label_components_by_overlap(components, truth_fine)
        rows = []
        for comp in range(1, n + 1):
            feats = region_descriptors(components, comp, vols["ct"], vols["pet"])
            row = {"patient_id": pid, "component": comp, "truth_label": truth_labels[comp]}
            row.update({k: float(v) for k, v in zip(REGION_FEATURE_NAMES, feats.as_vector())})
            rows.append(row)
        return rows

    results = _parallel_map(cfg, one, ids)
    all_rows = [row for pid in sorted(results) for row in results[pid]]
    frame = pd.DataFrame(
        all_rows, columns=["patient_id", "component", "truth_label", *REGION_FEATURE_NAMES]
    )
    out_path = os.path.join(cfg.out_dir, "features", "features.csv")
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    frame.to_csv(out_path, index=False)
    return {"patients": len(ids), "components": len(all_rows)}


def _load_features(cfg: PipelineConfig) -> pd.DataFrame:
    path = os.path.join(cfg.out_dir, "features", "features.csv")
    if not os.path.exists(path):
        raise DataError(f"feature table not found at {path}; run the features stage first")
    return pd.read_csv(path)


def stage_classify(cfg: PipelineConfig) -> dict:
    feats = _load_features(cfg)
    split = ensure_split(cfg)
    boxes = _read_json(os.path.join(cfg.out_dir, "localize", "boxes.json"), "localization boxes")
    missing = sorted(set(feats["patient_id"].astype(str)) - set(split))
    if missing:
        raise DataError(f"patients missing from the split assignment: {missing}")

    feats = feats.sort_values(["patient_id", "component"]).reset_index(drop=True)
    is_train = feats["patient_id"].astype(str).map(split) == "train"
    x = feats[list(REGION_FEATURE_NAMES)].to_numpy(dtype=np.float64)
    y = feats["truth_label"].to_numpy(dtype=np.int64)
    if is_train.sum() == 0:
        raise DataError("no training components for the classifier")

    model = svm_train(
        x[is_train.to_numpy()],
        y[is_train.to_numpy()],
        SvmConfig(C=cfg.svm_c, standardize=cfg.svm_standardize),
    )
    predicted = svm_predict(model, x)
    feats["predicted_label"] = predicted

    cls_dir = os.path.join(cfg.out_dir, "classify")
    os.makedirs(cls_dir, exist_ok=True)
    save_model(model, os.path.join(cls_dir, "model.json"))
    feats[["patient_id", "component", "truth_label", "predicted_label"]].to_csv(
        os.path.join(cls_dir, "predictions.csv"), index=False
    )

    metrics = {}
    for name, sel in (("train", is_train.to_numpy()), ("validation", ~is_train.to_numpy())):
        if sel.any():
            metrics[name] = f1_scores(y[sel], predicted[sel])
    _write_json(metrics, os.path.join(cls_dir, "metrics.json"))

    # Persist relabelled semantic masks on the fine grid.
    source_dir = _mask_source_dir(cfg)
    mask_out = os.path.join(cls_dir, "masks")
    os.makedirs(mask_out, exist_ok=True)
    by_patient = {
        pid: dict(zip(group["component"], group["predicted_label"]))
        for pid, group in feats.groupby("patient_id")
    }

    def one(pid: str):
        box = _load_box(boxes, pid)
        vols = _fine_volumes(cfg, pid, box, source_dir)
        components, n = connected_components(vols["mask"], connectivity=26)
        predictions = {int(k): int(v) for k, v in by_patient.get(pid, {}).items()}
        if len(predictions) != n:
            raise StageError(
                f"{pid}: {n} components on disk but {len(predictions)} predictions; "
                "re-run the features stage"
            )
        relabelled = relabel_segmentation(components, predictions)
        save_nifti(relabelled, os.path.join(mask_out, f"{pid}_mask.nii.gz"))
        return n

    ids = sorted(str(p) for p in feats["patient_id"].unique())
    _parallel_map(cfg, one, ids)
    return {"components": int(len(feats)), "metrics": metrics}


def _predicted_regions(cfg: PipelineConfig) -> tuple[pd.DataFrame, dict[str, list[RegionFeatures]]]:
    """Feature rows joined with predictions; tumour regions per patient."""
    path = os.path.join(cfg.out_dir, "classify", "predictions.csv")
    if not os.path.exists(path):
        raise DataError(f"predictions not found at {path}; run the classify stage first")
    preds = pd.read_csv(path)
    feats = _load_features(cfg)
    merged = feats.merge(
        preds[["patient_id", "component", "predicted_label"]],
        on=["patient_id", "component"],
        how="left",
    )
    if merged["predicted_label"].isna().any():
        raise DataError("feature table and predictions are out of sync; re-run classify")
    regions: dict[str, list[RegionFeatures]] = {}
    for pid, group in merged.groupby("patient_id"):
        kept = group[group["predicted_label"] > 0]
        regions[str(pid)] = [
            RegionFeatures(**{name: float(row[name]) for name in REGION_FEATURE_NAMES})
            for _, row in kept.iterrows()
        ]
    return merged, regions


def _descriptor_table(cfg: PipelineConfig, table: CohortTable) -> pd.DataFrame:
    """Patient-level calibrated descriptors aligned with the cohort rows."""
    _, regions = _predicted_regions(cfg)
    rows = []
    for pid in table.ids:
        pfv = patient_feature_vector(regions.get(pid, []))
        rows.append(select_calibrated_features(pfv))
    return pd.DataFrame(rows, columns=[f"desc_{n}" for n in CALIBRATED_FEATURE_NAMES])


def _survival_columns(cfg: PipelineConfig, ehr: list[str], desc: list[str]) -> list[str]:
    spec = cfg.survival_features.strip()
    if spec == "ehr":
        return ehr
    if spec == "desc":
        return desc
    if spec == "ehr+desc":
        return ehr + desc
    columns = [c.strip() for c in spec.split(",") if c.strip()]
    unknown = [c for c in columns if c not in ehr and c not in desc]
    if unknown:
        raise ConfigError(
            f"survival_features names unknown columns {unknown}; "
            f"available: {ehr + desc}"
        )
    if not columns:
        raise ConfigError("survival_features must name at least one column")
    return columns


def stage_survival(cfg: PipelineConfig) -> dict:
    table = cohort_from_csv(cfg.ehr_csv)
    split = ensure_split(cfg)
    missing = sorted(set(table.ids) - set(split))
    if missing:
        raise DataError(f"patients missing from the split assignment: {missing}")
    ehr_cols = list(table.columns)
    desc = _descriptor_table(cfg, table)
    joined = CohortTable(
        ids=list(table.ids),
        covariates=pd.concat([table.covariates, desc], axis=1),
        time=table.time,
        event=table.event,
    )
    joined = impute_missing(joined, -1.0)
    train_mask = np.array([split[pid] == "train" for pid in joined.ids])

    surv_dir = os.path.join(cfg.out_dir, "survival")
    os.makedirs(surv_dir, exist_ok=True)
    cohort_to_csv(joined, os.path.join(surv_dir, "cohort.csv"))

    feature_sets = [ehr_cols, ehr_cols + list(desc.columns)]
    sweeps = []
    for kind in ("weibull", "cox"):
        sweep = calibration_sweep(joined, feature_sets, kind, train_mask)
        sweep.insert(0, "model", kind)
        sweeps.append(sweep)
    pd.concat(sweeps, ignore_index=True).to_csv(os.path.join(surv_dir, "sweep.csv"), index=False)

    selected = _survival_columns(cfg, ehr_cols, list(desc.columns))
    joined = joined.subset_columns(selected)
    train = joined.subset_rows(train_mask)
    x_all = joined.covariates.to_numpy(dtype=np.float64)
    reports = {}
    significance = []
    risks = pd.DataFrame({"patient_id": joined.ids})
    risks["split"] = [split[pid] for pid in joined.ids]
    for kind in ("weibull", "cox"):
        model = fit_weibull_aft(train) if kind == "weibull" else fit_cox_ph(train)
        risks[f"{kind}_risk"] = predict_risk(model, x_all)
        sig = coefficient_significance(model)
        sig.insert(0, "model", kind)
        significance.append(sig)
        report = {
            "columns": list(model.columns),
            "coefficients": [float(v) for v in model.beta],
            "loglik": model.loglik,
            "n_events": model.n_events,
            "n_iterations": model.n_iter,
            "cov_diag": [float(v) for v in np.diag(model.cov)],
        }
        if kind == "weibull":
            report["beta0"] = model.beta0
            report["rho"] = model.rho
        reports[kind] = report
        _write_json(report, os.path.join(surv_dir, f"{kind}.json"))
    pd.concat(significance, ignore_index=True).to_csv(
        os.path.join(surv_dir, "significance.csv"), index=False
    )
    risks.to_csv(os.path.join(surv_dir, "risks.csv"), index=False)

    val = joined.subset_rows(~train_mask)
    metrics = {}
    for kind in ("weibull", "cox"):
        val_risk = risks.loc[~train_mask, f"{kind}_risk"].to_numpy()
        try:
            metrics[f"{kind}_val_cindex"] = concordance_index(val_risk, val.time, val.event)
        except ValueError as exc:
            metrics[f"{kind}_val_cindex"] = None
            metrics[f"{kind}_val_cindex_note"] = str(exc)
    _write_json(metrics, os.path.join(surv_dir, "metrics.json"))
    return {"models": list(reports), "metrics": metrics}


def _standardize_train_stats(values: np.ndarray, train_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means/stds over training rows; binary-ish columns untouched."""
    means = np.zeros(values.shape[1])
    stds = np.ones(values.shape[1])
    for j in range(values.shape[1]):
        col = values[train_mask, j]
        if len(np.unique(col)) > 3:
            sd = col.std()
            if sd > 1e-12:
                means[j] = col.mean()
                stds[j] = sd
    return means, stds


def stage_neural(cfg: PipelineConfig) -> dict:
    table = cohort_from_csv(cfg.ehr_csv)
    split = ensure_split(cfg)
    boxes = _read_json(os.path.join(cfg.out_dir, "localize", "boxes.json"), "localization boxes")
    pred_mask_dir = os.path.join(cfg.out_dir, "classify", "masks")
    if not os.path.isdir(pred_mask_dir):
        raise DataError(f"classified masks not found at {pred_mask_dir}; run the classify stage first")

    table_imp = impute_missing(table, -1.0)
    ehr_values = table_imp.covariates.to_numpy(dtype=np.float64)
    train_mask = np.array([split.get(pid) == "train" for pid in table.ids])
    if not train_mask.any():
        raise DataError("neural stage needs at least one training patient")
    means, stds = _standardize_train_stats(ehr_values, train_mask)
    ehr_std = (ehr_values - means) / stds

    patch_shape = cfg.patch_size if cfg.model == "multi_patch" else cfg.df_patch_size

    def one(pid: str):
        box = _load_box(boxes, pid)
        vols = _fine_volumes(cfg, pid, box, None)
        fused = fuse_average(znormalize(vols["ct"]), znormalize(vols["pet"]))
        mask = load_nifti(os.path.join(pred_mask_dir, f"{pid}_mask.nii.gz"), Modality.MASK)
        binary = mask.with_data((mask.data > 0).astype(np.float32), Modality.MASK)
        components, n = connected_components(binary, connectivity=26)
        if n == 0:
            return None
        patches = []
        descs = []
        if cfg.model == "deep_fusion":
            # One patch centred on the whole tumour burden.
            idx = np.argwhere(components.data > 0)
            center = components.origin_mm + idx.mean(axis=0) * components.spacing_mm
            patch = extract_patch(fused, center, patch_shape)
            patches.append(patch.data)
            descs.append(np.zeros(len(CALIBRATED_FEATURE_NAMES)))
        else:
            for comp in range(1, n + 1):
                feats = region_descriptors(components, comp, vols["ct"], vols["pet"])
                pfv = patient_feature_vector([feats])
                descs.append(select_calibrated_features(pfv))
                center = np.array([feats.centroid_z, feats.centroid_y, feats.centroid_x])
                patch = extract_patch(fused, center, patch_shape)
                patches.append(patch.data)
        return np.stack(patches), np.stack(descs)

    raw = _parallel_map(cfg, one, list(table.ids))

    desc_rows = np.concatenate(
        [raw[pid][1] for pid in table.ids if raw[pid] is not None]
    )
    desc_owner_train = np.concatenate(
        [
            np.full(len(raw[pid][1]), train_mask[i])
            for i, pid in enumerate(table.ids)
            if raw[pid] is not None
        ]
    ).astype(bool)
    if cfg.model == "multi_patch":
        d_means, d_stds = _standardize_train_stats(desc_rows, desc_owner_train)
    else:
        d_means = np.zeros(desc_rows.shape[1])
        d_stds = np.ones(desc_rows.shape[1])

    samples = []
    for i, pid in enumerate(table.ids):
        entry = raw[pid]
        graph = None
        if entry is not None:
            patches, descs = entry
            graph = TumorGraph(patches=patches, descriptors=(descs - d_means) / d_stds)
        samples.append(
            GraphSample(
                patient_id=pid,
                graph=graph,
                ehr=ehr_std[i],
                time=float(table.time[i]),
                event=int(table.event[i]),
            )
        )

    train_samples = [s for i, s in enumerate(samples) if train_mask[i]]
    val_samples = [s for i, s in enumerate(samples) if not train_mask[i]]
    t_train = np.array([s.time for s in train_samples])
    e_train = np.array([s.event for s in train_samples])
    bins = make_time_bins(t_train, e_train, cfg.time_bins if cfg.time_bins > 0 else None)

    d_ehr = ehr_std.shape[1]
    if cfg.model == "multi_patch":
        model: MultiPatchModel | DeepFusionModel = MultiPatchModel(
            seed=cfg.seed_neural,
            d_ehr=d_ehr,
            k_bins=bins.k,
            d_desc=desc_rows.shape[1],
            patch_shape=tuple(cfg.patch_size),
        )
    else:
        model = DeepFusionModel(
            seed=cfg.seed_neural,
            d_ehr=d_ehr,
            k_bins=bins.k,
            patch_shape=tuple(cfg.df_patch_size),
        )
    tc = TrainConfig(
        lr=cfg.lr,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed_neural,
        early_stop_cindex=cfg.early_stop_cindex if cfg.early_stop_cindex > 0 else None,
    )
    result = train_model(model, train_samples, bins, tc, val_samples or None)

    neural_dir = os.path.join(cfg.out_dir, "neural")
    os.makedirs(neural_dir, exist_ok=True)
    save_checkpoint(result, os.path.join(neural_dir, "checkpoint.npz"))
    pd.DataFrame(result.history).to_csv(os.path.join(neural_dir, "history.csv"), index=False)

    risks, scored = predict_risks(model, bins, samples)
    out = pd.DataFrame(
        {
            "patient_id": table.ids,
            "split": [split[pid] for pid in table.ids],
            "neural_risk": risks,
            "scored": scored.astype(int),
        }
    )
    out.to_csv(os.path.join(neural_dir, "risks.csv"), index=False)
    return {"epochs_run": len(result.history), "bins": bins.k}


def stage_ensemble(cfg: PipelineConfig) -> dict:
    surv_path = os.path.join(cfg.out_dir, "survival", "risks.csv")
    neural_path = os.path.join(cfg.out_dir, "neural", "risks.csv")
    for path, what in ((surv_path, "survival risks"), (neural_path, "neural risks")):
        if not os.path.exists(path):
            raise DataError(f"{what} not found at {path}; run the producing stage first")
    surv = pd.read_csv(surv_path)
    neural = pd.read_csv(neural_path)
    merged = surv.merge(neural[["patient_id", "neural_risk"]], on="patient_id", how="inner")
    if len(merged) != len(surv) or len(merged) != len(neural):
        raise DataError("survival and neural risk tables cover different patients")

    merged["ensemble_risk"] = ensemble_risk(
        merged["weibull_risk"].to_numpy(),
        merged["neural_risk"].to_numpy(),
        mode=cfg.ensemble_mode,
    )
    ens_dir = os.path.join(cfg.out_dir, "ensemble")
    os.makedirs(ens_dir, exist_ok=True)
    merged.to_csv(os.path.join(ens_dir, "risks.csv"), index=False)

    table = cohort_from_csv(cfg.ehr_csv)
    by_id = {pid: k for k, pid in enumerate(table.ids)}
    metrics = {"mode": cfg.ensemble_mode}
    val = merged[merged["split"] == "validation"]
    if len(val):
        rows = [by_id[pid] for pid in val["patient_id"]]
        t = table.time[rows]
        e = table.event[rows]
        for col in ("weibull_risk", "cox_risk", "neural_risk", "ensemble_risk"):
            try:
                metrics[f"{col.replace('_risk', '')}_val_cindex"] = concordance_index(
                    val[col].to_numpy(), t, e
                )
            except ValueError as exc:
                metrics[f"{col.replace('_risk', '')}_val_cindex"] = None
                metrics[f"{col.replace('_risk', '')}_note"] = str(exc)
    _write_json(metrics, os.path.join(ens_dir, "metrics.json"))
    return metrics


def stage_evaluate(cfg: PipelineConfig) -> dict:
    split = ensure_split(cfg)
    boxes = _read_json(os.path.join(cfg.out_dir, "localize", "boxes.json"), "localization boxes")
    pred_dir = os.path.join(cfg.out_dir, "classify", "masks")
    if not os.path.isdir(pred_dir):
        raise DataError(f"classified masks not found at {pred_dir}; run the classify stage first")
    ids = sorted(pid for pid in boxes if os.path.exists(os.path.join(pred_dir, f"{pid}_mask.nii.gz")))
    if not ids:
        raise DataError("no classified masks to evaluate")

    def one(pid: str):
        box = _load_box(boxes, pid)
        pred = load_nifti(os.path.join(pred_dir, f"{pid}_mask.nii.gz"), Modality.MASK)
        truth = load_nifti(os.path.join(cfg.masks_dir, f"{pid}_mask.nii.gz"), Modality.MASK)
        truth_fine = resample(
            crop_mm(truth, box, pad_value=0.0), np.full(3, cfg.fine_spacing_mm), "nearest"
        )
        return pred, truth_fine

    pairs = _parallel_map(cfg, one, ids)
    dice = {}
    groups: dict[str, list[str]] = {"all": ids}
    groups["train"] = [pid for pid in ids if split.get(pid) == "train"]
    groups["validation"] = [pid for pid in ids if split.get(pid) == "validation"]
    for name, members in groups.items():
        if members:
            dice[name] = dice_scores(
                [pairs[pid][0] for pid in members], [pairs[pid][1] for pid in members]
            )
    _write_json(dice, os.path.join(cfg.out_dir, "evaluate", "dice.json"))

    # Split summary: survival-time histogram (20 bins) and censoring per split.
    table = cohort_from_csv(cfg.ehr_csv)
    lo, hi = float(table.time.min()), float(table.time.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, 21)
    rows = []
    for name in ("train", "validation"):
        members = [k for k, pid in enumerate(table.ids) if split.get(pid) == name]
        times = table.time[members]
        events = table.event[members]
        counts, _ = np.histogram(times, bins=edges)
        censor_frac = float(1.0 - events.mean()) if len(members) else float("nan")
        for b in range(20):
            rows.append(
                {
                    "split": name,
                    "n_patients": len(members),
                    "censor_fraction": censor_frac,
                    "bin_index": b,
                    "bin_lo": float(edges[b]),
                    "bin_hi": float(edges[b + 1]),
                    "count": int(counts[b]),
                }
            )
    pd.DataFrame(rows).to_csv(os.path.join(cfg.out_dir, "evaluate", "split_summary.csv"), index=False)

    summary = {"dice": dice, "patients": len(ids)}
    for extra in ("survival", "ensemble"):
        path = os.path.join(cfg.out_dir, extra, "metrics.json")
        if os.path.exists(path):
            summary[extra] = _read_json(path, f"{extra} metrics")
    _write_json(summary, os.path.join(cfg.out_dir, "evaluate", "summary.json"))
    return {"dice": dice}


_STAGE_FUNCS = {
    "localize": stage_localize,
    "features": stage_features,
    "classify": stage_classify,
    "survival": stage_survival,
    "neural": stage_neural,
    "ensemble": stage_ensemble,
    "evaluate": stage_evaluate,
}


@dataclass
class PipelineResult:
    exit_code: int
    stage_status: dict[str, str]


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Execute the configured stages in order, recording status per stage.

    The first failing stage aborts the remainder (their status says so);
    partial artifacts are kept. Exit code 0 on success, 3 when input data
    is missing or malformed, 4 when a stage fails while running.
    """
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    status: dict[str, str] = {}
    exit_code = 0
    failed = False
    for stage in STAGE_ORDER:
        if stage not in cfg.stages:
            status[stage] = "disabled"
            continue
        if failed:
            status[stage] = "skipped: upstream failure"
            continue
        try:
            _STAGE_FUNCS[stage](cfg)
            status[stage] = "ok"
        except DataError as exc:
            status[stage] = f"failed: {exc}"
            exit_code = 3
            failed = True
        except Exception as exc:  # noqa: BLE001 - a broken stage must not kill the report
            status[stage] = f"failed: {type(exc).__name__}: {exc}"
            exit_code = 4
            failed = True

    manifest = {
        "format_version": 1,
        "config": cfg.as_dict(),
        "stages": status,
    }
    _write_json(manifest, os.path.join(cfg.out_dir, "manifest.json"))
    return PipelineResult(exit_code=exit_code, stage_status=status)
