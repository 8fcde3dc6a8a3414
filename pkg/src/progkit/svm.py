"""Soft-margin RBF SVM trained by sequential minimal optimization.

Binary subproblems are solved with maximal-violating-pair working-set
selection on the dual; multiclass is one-vs-one with majority voting.
Features are z-scored internally (constant columns pass through), and the
fitted model serializes to a versioned JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DataError, FitError
from .volume import Modality, Volume

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SvmConfig:
    """Hyperparameters for svm_train."""

    C: float = 1.0
    gamma: float | str = "scale"
    tol: float = 1e-3
    max_iter: int = 1_000_000
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.C <= 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if isinstance(self.gamma, str):
            if self.gamma != "scale":
                raise ValueError(f"gamma must be a positive float or 'scale', got {self.gamma!r}")
        elif self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass
class BinarySvm:
    """One trained one-vs-one subproblem: class_a maps to -1, class_b to +1."""

    class_a: int
    class_b: int
    support_vectors: np.ndarray  # standardized feature rows
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    support_idx: np.ndarray  # row positions within the (a, b) training subset

    def decision(self, x_std: np.ndarray, gamma: float) -> np.ndarray:
        k = _rbf_kernel(x_std, self.support_vectors, gamma)
        return k @ self.dual_coef + self.bias


@dataclass
class SvmModel:
    """Fitted multiclass model with its preprocessing statistics."""

    classes: np.ndarray
    gamma: float
    config: SvmConfig
    mean: np.ndarray
    std: np.ndarray
    machines: list[BinarySvm] = field(default_factory=list)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != len(self.mean):
            raise ValueError(
                f"feature dimension {x.shape[1]} != model dimension {len(self.mean)}"
            )
        return (x - self.mean) / self.std


def _rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * sq)


def _smo_solve(
    kernel: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int
) -> tuple[np.ndarray, float]:
    """Solve the binary dual by maximal-violating-pair SMO.

    Returns (alpha, bias). Stops when the KKT violation m(alpha) - M(alpha)
    drops below tol; raises FitError when max_iter is exhausted first.
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective: Q alpha - 1
    tau = 1e-12
    bound_eps = 1e-12

    for _ in range(max_iter):
        can_up = ((y > 0) & (alpha < C - bound_eps)) | ((y < 0) & (alpha > bound_eps))
        can_low = ((y > 0) & (alpha > bound_eps)) | ((y < 0) & (alpha < C - bound_eps))
        ygrad = y * grad
        up_vals = np.where(can_up, -ygrad, -np.inf)
        low_vals = np.where(can_low, -ygrad, np.inf)
        i = int(np.argmax(up_vals))
        m_val = float(up_vals[i])
        j = int(np.argmin(low_vals))
        big_m = float(low_vals[j])
        if m_val - big_m < tol:
            return alpha, _bias(alpha, grad, y, C, m_val, big_m)

        quad = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        if quad <= 0:
            quad = tau
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            alpha[i] = old_i + delta
            alpha[j] = old_j + delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            alpha[i] = old_i - delta
            alpha[j] = old_j + delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        # grad = Q alpha - 1 with Q = (y y^T) * K, updated incrementally.
        grad += y * (
            kernel[:, i] * (y[i] * (alpha[i] - old_i))
            + kernel[:, j] * (y[j] * (alpha[j] - old_j))
        )

    raise FitError(f"SMO did not converge within {max_iter} iterations")


def _bias(
    alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, C: float, m_val: float, big_m: float
) -> float:
    """Offset from free support vectors, or the violation midpoint."""
    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    f_prime = y * (grad + 1.0)  # sum_j alpha_j y_j K_ij, from grad = y f' - 1
    if free.any():
        return float((y[free] - f_prime[free]).mean())
    return float((m_val + big_m) / 2.0)


def kkt_violation(machine: BinarySvm, x_std: np.ndarray, y: np.ndarray, gamma: float, C: float) -> float:
    """Recompute m(alpha) - M(alpha) for a trained binary machine.

    x_std / y must be the standardized training rows of the machine's
    class pair, in training order; support_idx places the duals back.
    """
    alpha = np.zeros(len(y))
    alpha[machine.support_idx] = np.abs(machine.dual_coef)
    kernel = _rbf_kernel(x_std, machine.support_vectors, gamma)
    f_prime = kernel @ machine.dual_coef
    grad = y * f_prime - 1.0
    bound_eps = 1e-12
    can_up = ((y > 0) & (alpha < C - bound_eps)) | ((y < 0) & (alpha > bound_eps))
    can_low = ((y > 0) & (alpha > bound_eps)) | ((y < 0) & (alpha < C - bound_eps))
    ygrad = y * grad
    m_val = np.where(can_up, -ygrad, -np.inf).max()
    big_m = np.where(can_low, -ygrad, np.inf).min()
    return float(m_val - big_m)


def svm_train(features: np.ndarray, labels: np.ndarray, config: SvmConfig = SvmConfig()) -> SvmModel:
    """Train a one-vs-one multiclass RBF SVM.

    Features are z-scored column-wise (constant columns untouched) unless
    config.standardize is off; gamma "scale" resolves to
    1 / (d * var(features_standardized)). Requires at least 2 classes and
    one sample per class.
    """
    x = np.asarray(features, dtype=np.float64)
    y_in = np.asarray(labels)
    if x.ndim != 2:
        raise ValueError(f"features must be 2D, got shape {x.shape}")
    if len(x) != len(y_in):
        raise ValueError(f"features ({len(x)}) and labels ({len(y_in)}) disagree")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    classes = np.unique(y_in)
    if len(classes) < 2:
        raise FitError(f"need at least 2 classes to train, got {classes.tolist()}")

    if config.standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
    else:
        mean = np.zeros(x.shape[1])
        std = np.ones(x.shape[1])
    x_std = (x - mean) / std

    if config.gamma == "scale":
        var = float(x_std.var())
        gamma = 1.0 / (x.shape[1] * var) if var > 1e-12 else 1.0
    else:
        gamma = float(config.gamma)

    model = SvmModel(
        classes=classes.astype(np.int64),
        gamma=gamma,
        config=config,
        mean=mean,
        std=std,
    )
    for a_pos in range(len(classes)):
        for b_pos in range(a_pos + 1, len(classes)):
            cls_a, cls_b = classes[a_pos], classes[b_pos]
            sel = (y_in == cls_a) | (y_in == cls_b)
            rows = x_std[sel]
            y = np.where(y_in[sel] == cls_b, 1.0, -1.0)
            kernel = _rbf_kernel(rows, rows, gamma)
            alpha, bias = _smo_solve(kernel, y, config.C, config.tol, config.max_iter)
            sv = alpha > 1e-12
            model.machines.append(
                BinarySvm(
                    class_a=int(cls_a),
                    class_b=int(cls_b),
                    support_vectors=rows[sv].copy(),
                    dual_coef=(alpha * y)[sv].copy(),
                    bias=bias,
                    support_idx=np.nonzero(sv)[0],
                )
            )
    return model


def svm_predict(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Predict class labels by one-vs-one majority vote.

    Vote ties break by the larger sum of absolute decision values over won
    pairs, then by the lowest class label.
    """
    x_std = model.standardize(features)
    n = len(x_std)
    class_pos = {int(c): k for k, c in enumerate(model.classes)}
    votes = np.zeros((n, len(model.classes)), dtype=np.int64)
    margin = np.zeros((n, len(model.classes)))
    for machine in model.machines:
        dec = machine.decision(x_std, model.gamma)
        pick_b = dec > 0
        a_pos, b_pos = class_pos[machine.class_a], class_pos[machine.class_b]
        votes[:, b_pos] += pick_b
        votes[:, a_pos] += ~pick_b
        margin[np.nonzero(pick_b)[0], b_pos] += np.abs(dec[pick_b])
        margin[np.nonzero(~pick_b)[0], a_pos] += np.abs(dec[~pick_b])
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        best = max(
            range(len(model.classes)),
            key=lambda k: (votes[r, k], margin[r, k], -int(model.classes[k])),
        )
        out[r] = model.classes[best]
    return out


def save_model(model: SvmModel, path: str) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "svm_ovo_rbf",
        "classes": model.classes.tolist(),
        "gamma": model.gamma,
        "config": {
            "C": model.config.C,
            "gamma": model.config.gamma,
            "tol": model.config.tol,
            "max_iter": model.config.max_iter,
            "standardize": model.config.standardize,
        },
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "machines": [
            {
                "class_a": m.class_a,
                "class_b": m.class_b,
                "support_vectors": m.support_vectors.tolist(),
                "dual_coef": m.dual_coef.tolist(),
                "bias": m.bias,
                "support_idx": m.support_idx.tolist(),
            }
            for m in model.machines
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path: str) -> SvmModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r} in {path}")
    cfg = doc["config"]
    config = SvmConfig(
        C=cfg["C"],
        gamma=cfg["gamma"],
        tol=cfg["tol"],
        max_iter=cfg["max_iter"],
        standardize=cfg["standardize"],
    )
    model = SvmModel(
        classes=np.asarray(doc["classes"], dtype=np.int64),
        gamma=float(doc["gamma"]),
        config=config,
        mean=np.asarray(doc["mean"], dtype=np.float64),
        std=np.asarray(doc["std"], dtype=np.float64),
    )
    for m in doc["machines"]:
        model.machines.append(
            BinarySvm(
                class_a=int(m["class_a"]),
                class_b=int(m["class_b"]),
                support_vectors=np.asarray(m["support_vectors"], dtype=np.float64).reshape(
                    len(m["dual_coef"]), -1
                ),
                dual_coef=np.asarray(m["dual_coef"], dtype=np.float64),
                bias=float(m["bias"]),
                support_idx=np.asarray(m["support_idx"], dtype=np.int64),
            )
        )
    return model


def label_components_by_overlap(
    components: Volume, truth: Volume, min_overlap: float = 0.1
) -> dict[int, int]:
    """Training label per component: majority truth class, background-gated.

    A component whose overlap with all tumour classes combined is below
    min_overlap of its own volume is labelled 0; otherwise it takes the
    majority tumour class among overlapping voxels.
    """
    if components.shape != truth.shape:
        raise ValueError(
            f"components shape {components.shape} != truth shape {truth.shape}"
        )
    comp = components.data.astype(np.int64)
    tru = truth.data.astype(np.int64)
    out: dict[int, int] = {}
    for label in range(1, int(comp.max()) + 1):
        sel = comp == label
        size = int(sel.sum())
        if size == 0:
            continue
        overlap_vals = tru[sel]
        tumour = overlap_vals[overlap_vals > 0]
        if len(tumour) < min_overlap * size:
            out[label] = 0
            continue
        counts = np.bincount(tumour)
        out[label] = int(np.argmax(counts))
    return out


def relabel_segmentation(
    components: Volume, predictions: dict[int, int]
) -> Volume:
    """Rewrite component ids into predicted semantic classes.

    Components predicted 0 are erased to background. Unlisted components
    raise, preventing silent label leakage.
    """
    comp = components.data.astype(np.int64)
    n = int(comp.max())
    missing = [label for label in range(1, n + 1) if label not in predictions]
    if missing:
        raise ValueError(f"no prediction for component ids {missing}")
    lut = np.zeros(n + 1, dtype=np.int64)
    for label, cls in predictions.items():
        if 1 <= label <= n:
            lut[label] = cls
    out = lut[comp]
    return components.with_data(out.astype(np.float32), modality=Modality.MASK)


def f1_scores(truth: np.ndarray, predicted: np.ndarray) -> dict[str, float | dict[int, float]]:
    """Per-class, macro and micro F1 over the union of observed labels."""
    t = np.asarray(truth).ravel()
    p = np.asarray(predicted).ravel()
    if len(t) != len(p):
        raise ValueError(f"truth ({len(t)}) and predictions ({len(p)}) disagree")
    if len(t) == 0:
        raise ValueError("cannot score an empty label set")
    classes = np.unique(np.concatenate([t, p]))
    per_class: dict[int, float] = {}
    # Macro is averaged in exact rational arithmetic over the integer
    # counts; rounding the per-class ratios first can miss the true mean
    # by an ulp.
    macro = Fraction(0)
    tp_total = fp_total = fn_total = 0
    for cls in classes:
        tp = int(np.sum((p == cls) & (t == cls)))
        fp = int(np.sum((p == cls) & (t != cls)))
        fn = int(np.sum((p != cls) & (t == cls)))
        denom = 2 * tp + fp + fn
        per_class[int(cls)] = (2.0 * tp / denom) if denom else 0.0
        macro += Fraction(2 * tp, denom) if denom else 0
        tp_total += tp
        fp_total += fp
        fn_total += fn
    micro_denom = 2 * tp_total + fp_total + fn_total
    return {
        "per_class": per_class,
        "macro": float(macro / len(classes)),
        "micro": (2.0 * tp_total / micro_denom) if micro_denom else 0.0,
    }
