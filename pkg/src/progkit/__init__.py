"""Prognosis toolkit for head-and-neck PET/CT studies.

Volumetric IO and geometry, landmark-based localization, tumour shape
features, SVM tumour typing, censored survival regression, a tumour-graph
MTLR network and a staged end-to-end pipeline.
"""

from .errors import (
    ConfigError,
    DataError,
    DetectionError,
    FitError,
    FormatError,
    ProgkitError,
    SeparationError,
    StageError,
    TrainingError,
)
from .localize import Landmarks, axial_profile, detect_landmarks, roi_box
from .morphology import (
    CALIBRATED_FEATURE_NAMES,
    REGION_FEATURE_NAMES,
    PatientFeatureVector,
    RegionFeatures,
    connected_components,
    euler_number,
    fill_holes,
    patient_feature_vector,
    region_descriptors,
    select_calibrated_features,
)
from .mtlr import (
    TimeBins,
    bin_index,
    make_time_bins,
    mtlr_loss,
    mtlr_loss_batch,
    mtlr_probabilities,
    mtlr_risk,
    mtlr_survival,
)
from .nifti import load_nifti, save_nifti
from .nnet import DeepFusionModel, Gatv2Layer, MultiPatchModel, TumorGraph
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    dice_scores,
    load_config,
    run_pipeline,
    split_cohort,
)
from .survival import (
    CohortTable,
    CoxPhModel,
    WeibullAftModel,
    calibration_sweep,
    coefficient_significance,
    cohort_from_csv,
    cohort_to_csv,
    concordance_index,
    fit_cox_ph,
    fit_weibull_aft,
    impute_missing,
    predict_risk,
    simulate_weibull_cohort,
)
from .svm import SvmConfig, SvmModel, f1_scores, svm_predict, svm_train
from .synth import SynthConfig, make_synthetic_cohort
from .training import (
    GraphSample,
    TrainConfig,
    TrainResult,
    ensemble_risk,
    load_checkpoint,
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

__version__ = "0.1.0"

__all__ = [
    "BoxMM",
    "CALIBRATED_FEATURE_NAMES",
    "CohortTable",
    "ConfigError",
    "CoxPhModel",
    "DataError",
    "DeepFusionModel",
    "DetectionError",
    "FitError",
    "FormatError",
    "Gatv2Layer",
    "GraphSample",
    "Landmarks",
    "Modality",
    "MultiPatchModel",
    "PatientFeatureVector",
    "PipelineConfig",
    "PipelineResult",
    "ProgkitError",
    "REGION_FEATURE_NAMES",
    "RegionFeatures",
    "SeparationError",
    "StageError",
    "SvmConfig",
    "SvmModel",
    "SynthConfig",
    "TimeBins",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TumorGraph",
    "Volume",
    "WeibullAftModel",
    "axial_profile",
    "bin_index",
    "calibration_sweep",
    "coefficient_significance",
    "cohort_from_csv",
    "cohort_to_csv",
    "concordance_index",
    "connected_components",
    "crop_mm",
    "detect_landmarks",
    "dice_scores",
    "ensemble_risk",
    "euler_number",
    "extract_patch",
    "f1_scores",
    "fill_holes",
    "fit_cox_ph",
    "fit_weibull_aft",
    "fuse_average",
    "impute_missing",
    "load_checkpoint",
    "load_config",
    "load_nifti",
    "make_synthetic_cohort",
    "make_time_bins",
    "mtlr_loss",
    "mtlr_loss_batch",
    "mtlr_probabilities",
    "mtlr_risk",
    "mtlr_survival",
    "patient_feature_vector",
    "predict_risk",
    "predict_risks",
    "region_descriptors",
    "resample",
    "roi_box",
    "run_pipeline",
    "save_checkpoint",
    "save_nifti",
    "select_calibrated_features",
    "simulate_weibull_cohort",
    "split_cohort",
    "svm_predict",
    "svm_train",
    "train_model",
    "window_clip",
    "znormalize",
]
