"""Training loop for the prognosis networks, plus risk ensembling.

Runs minibatch Adam on the MTLR loss with a multi-step learning-rate
schedule. Given one seed the run is deterministic: parameter init, shuffle
order and batch statistics reproduce bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .mtlr import TimeBins, mtlr_loss_batch, mtlr_risk
from .nnet import Adam, DeepFusionModel, MultiPatchModel, TumorGraph
from .survival import concordance_index


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the reference recipe."""

    lr: float = 0.016
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    milestones: tuple[int, ...] = (60, 80)
    lr_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_cindex: float | None = None

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr must be positive, epochs and batch_size at least 1")
        if self.early_stop_cindex is not None and not 0 < self.early_stop_cindex < 1:
            raise ValueError(f"early_stop_cindex must lie in (0, 1), got {self.early_stop_cindex}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index."""
        drops = sum(1 for m in self.milestones if m < epoch)
        return self.lr * self.lr_factor**drops


@dataclass
class GraphSample:
    """One patient's training record.

    graph is None for patients without tumours; they are skipped during
    training and get the cohort-median risk at inference.
    """

    patient_id: str
    graph: TumorGraph | None
    ehr: np.ndarray
    time: float
    event: int

    def __post_init__(self) -> None:
        self.ehr = np.asarray(self.ehr, dtype=np.float64)
        if self.time <= 0:
            raise ValueError(f"{self.patient_id}: time must be positive, got {self.time}")
        if self.event not in (0, 1):
            raise ValueError(f"{self.patient_id}: event must be 0 or 1, got {self.event}")


@dataclass
class TrainResult:
    model: MultiPatchModel | DeepFusionModel
    bins: TimeBins
    config: TrainConfig
    history: list[dict] = field(default_factory=list)


def _forward(model, batch: list[GraphSample], train: bool):
    ehr = np.stack([s.ehr for s in batch])
    if isinstance(model, MultiPatchModel):
        graphs = [s.graph for s in batch]
        return model.forward(graphs, ehr, train)
    patches = np.concatenate([s.graph.patches[:1] for s in batch], axis=0)
    return model.forward(patches, ehr, train)


def train_model(
    model: MultiPatchModel | DeepFusionModel,
    train_samples: list[GraphSample],
    bins: TimeBins,
    config: TrainConfig,
    val_samples: list[GraphSample] | None = None,
) -> TrainResult:
    """Minibatch Adam on the MTLR loss with the multi-step LR schedule.

    Patients without a graph are excluded up front. Validation concordance
    is evaluated after every epoch when val_samples are given; training
    stops early once it exceeds config.early_stop_cindex (if set). A
    non-finite loss or gradient aborts with diagnostics.
    """
    usable = [s for s in train_samples if s.graph is not None]
    if not usable:
        raise TrainingError("no trainable patients: every sample lacks a tumour graph")
    rng = np.random.default_rng(config.seed)
    adam = Adam(config.lr, config.beta1, config.beta2, config.eps)
    params = model.params()
    result = TrainResult(model=model, bins=bins, config=config)

    times = np.array([s.time for s in usable])
    events = np.array([s.event for s in usable])
    if events.sum() == 0:
        raise TrainingError("no observed events among trainable patients")

    for epoch in range(1, config.epochs + 1):
        adam.lr = config.lr_at(epoch)
        order = rng.permutation(len(usable))
        epoch_loss = 0.0
        n_seen = 0
        for start in range(0, len(usable), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [usable[i] for i in idx]
            logits, cache = _forward(model, batch, train=True)
            losses, dlogits = mtlr_loss_batch(logits, times[idx], events[idx], bins)
            loss = float(losses.mean())
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}: "
                    f"max |logit| = {np.abs(logits).max():.3g}"
                )
            grads = model.backward(dlogits / len(batch), cache)
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                raise TrainingError(
                    f"non-finite gradient at epoch {epoch} in {bad}; reduce the learning rate"
                )
            adam.step(params, grads)
            epoch_loss += loss * len(batch)
            n_seen += len(batch)

        row = {
            "epoch": epoch,
            "lr": adam.lr,
            "train_loss": epoch_loss / n_seen,
            "val_cindex": float("nan"),
        }
        if val_samples:
            risks, _ = predict_risks(model, bins, val_samples)
            v_times = np.array([s.time for s in val_samples])
            v_events = np.array([s.event for s in val_samples])
            try:
                row["val_cindex"] = concordance_index(risks, v_times, v_events)
            except ValueError:
                pass
        result.history.append(row)
        if (
            config.early_stop_cindex is not None
            and np.isfinite(row["val_cindex"])
            and row["val_cindex"] > config.early_stop_cindex
        ):
            break
    return result


def predict_risks(
    model: MultiPatchModel | DeepFusionModel,
    bins: TimeBins,
    samples: list[GraphSample],
    batch_size: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Risk score per sample in eval mode (running batch-norm statistics).

    Samples without a graph receive the median risk of the scored samples
    (0.0 if nobody can be scored). Returns (risks, scored_mask).
    """
    risks = np.zeros(len(samples))
    scored = np.zeros(len(samples), dtype=bool)
    with_graph = [i for i, s in enumerate(samples) if s.graph is not None]
    for start in range(0, len(with_graph), batch_size):
        idx = with_graph[start : start + batch_size]
        batch = [samples[i] for i in idx]
        logits, _ = _forward(model, batch, train=False)
        risks[idx] = mtlr_risk(logits, bins)
        scored[idx] = True
    if scored.any() and not scored.all():
        risks[~scored] = float(np.median(risks[scored]))
    return risks, scored


def ensemble_risk(risk_a: np.ndarray, risk_b: np.ndarray, mode: str = "zscore_mean") -> np.ndarray:
    """Average two cohort risk rankings.

    zscore_mean standardizes each input over the cohort first (a constant
    input contributes zeros); raw_mean averages as given. Both inputs must
    be equal-length with at least 2 entries.
    """
    a = np.asarray(risk_a, dtype=np.float64)
    b = np.asarray(risk_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"risk vectors must be equal-length 1D, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise ValueError("ensembling needs at least 2 patients")
    if mode == "raw_mean":
        return (a + b) / 2.0
    if mode != "zscore_mean":
        raise ValueError(f"unknown ensemble mode {mode!r}")

    def zscore(x: np.ndarray) -> np.ndarray:
        sd = x.std()
        if sd < 1e-12:
            return np.zeros_like(x)
        return (x - x.mean()) / sd

    return (zscore(a) + zscore(b)) / 2.0


def save_checkpoint(result: TrainResult, path: str) -> None:
    """Persist model weights, buffers, bins and config as one .npz file."""
    model = result.model
    meta = {
        "format_version": 1,
        "kind": model.kind,
        "seed": model.seed,
        "d_ehr": model.d_ehr,
        "k_bins": model.k_bins,
        "embed": model.embed,
        "hidden": model.hidden,
        "patch_shape": list(model.patch_shape),
        "config": {
            "lr": result.config.lr,
            "epochs": result.config.epochs,
            "batch_size": result.config.batch_size,
            "seed": result.config.seed,
            "milestones": list(result.config.milestones),
            "lr_factor": result.config.lr_factor,
            "beta1": result.config.beta1,
            "beta2": result.config.beta2,
            "eps": result.config.eps,
            "early_stop_cindex": result.config.early_stop_cindex,
        },
        "history": result.history,
    }
    if isinstance(model, MultiPatchModel):
        meta["d_desc"] = model.d_desc
    arrays = {f"param/{k}": v for k, v in model.params().items()}
    arrays.update({f"buffer/{k}": v for k, v in model.encoder.buffers.items()})
    arrays["bins"] = result.bins.edges
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path: str) -> TrainResult:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version in {path}")
        bins = TimeBins(edges=data["bins"])
        if meta["kind"] == "multi_patch":
            model: MultiPatchModel | DeepFusionModel = MultiPatchModel(
                seed=meta["seed"],
                d_ehr=meta["d_ehr"],
                k_bins=meta["k_bins"],
                d_desc=meta["d_desc"],
                embed=meta["embed"],
                hidden=meta["hidden"],
                patch_shape=tuple(meta["patch_shape"]),
            )
        elif meta["kind"] == "deep_fusion":
            model = DeepFusionModel(
                seed=meta["seed"],
                d_ehr=meta["d_ehr"],
                k_bins=meta["k_bins"],
                embed=meta["embed"],
                hidden=meta["hidden"],
                patch_shape=tuple(meta["patch_shape"]),
            )
        else:
            raise ValueError(f"unknown model kind {meta['kind']!r} in {path}")
        model.set_params({k[len("param/") :]: data[k] for k in data.files if k.startswith("param/")})
        for key in data.files:
            if key.startswith("buffer/"):
                model.encoder.buffers[key[len("buffer/") :]] = np.array(data[key])
        cfg = meta["config"]
        config = TrainConfig(
            lr=cfg["lr"],
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            seed=cfg["seed"],
            milestones=tuple(cfg["milestones"]),
            lr_factor=cfg["lr_factor"],
            beta1=cfg["beta1"],
            beta2=cfg["beta2"],
            eps=cfg["eps"],
            early_stop_cindex=cfg["early_stop_cindex"],
        )
        result = TrainResult(model=model, bins=bins, config=config)
        result.history = meta["history"]
        return result
