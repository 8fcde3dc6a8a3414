"""Multi-task logistic regression head for discrete-time survival.

Time is split into K bins by event-time quantiles. A subject's outcome is
one of K+1 monotone label sequences (the event falls in bin k, or after the
last edge); sequence k scores the suffix sum of the K logits from position
k. Censored subjects marginalize over every sequence consistent with their
censoring time. The loss is the negative log-probability, normalized by
log-sum-exp; gradients are analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeBins:
    """Strictly increasing positive bin edges tau_1 < ... < tau_K."""

    edges: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.float64))
        if self.edges.ndim != 1 or len(self.edges) < 1:
            raise ValueError("time bins need at least one edge")
        if not np.all(self.edges > 0):
            raise ValueError(f"bin edges must be positive, got {self.edges}")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError(f"bin edges must be strictly increasing, got {self.edges}")

    @property
    def k(self) -> int:
        return len(self.edges)


def make_time_bins(time: np.ndarray, event: np.ndarray, k: int | None = None) -> TimeBins:
    """Quantile bin edges over the observed event times.

    Edge j is the nearest-rank j/K quantile of the sorted event times.
    Duplicate edges are perturbed by +1e-6 * j (1-based) to restore strict
    monotonicity. K defaults to ceil(sqrt(#events)).
    """
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event)
    events = np.sort(time[event == 1])
    n = len(events)
    if n == 0:
        raise ValueError("cannot build time bins without observed events")
    if k is None:
        k = max(1, math.ceil(math.sqrt(n)))
    if k < 1:
        raise ValueError(f"bin count must be >= 1, got {k}")

    edges = np.empty(k)
    for j in range(1, k + 1):
        rank = math.ceil(j / k * n)  # nearest-rank quantile, 1-based
        edges[j - 1] = events[rank - 1]
    for j in range(1, k):
        if edges[j] <= edges[j - 1]:
            edges[j] = edges[j - 1] + 1e-6 * (j + 1)
    return TimeBins(edges=edges)


def bin_index(bins: TimeBins, t: float) -> int:
    """1-based index of the bin containing t: smallest k with t <= tau_k,
    or K+1 when t exceeds every edge."""
    if t <= 0:
        raise ValueError(f"time must be positive, got {t}")
    return int(np.searchsorted(bins.edges, t, side="left")) + 1


def _suffix_scores(f: np.ndarray) -> np.ndarray:
    """Scores of the K+1 label sequences: s_k = sum_{j >= k} f_j, s_{K+1} = 0."""
    rev = np.cumsum(f[..., ::-1], axis=-1)[..., ::-1]
    zeros = np.zeros(f.shape[:-1] + (1,))
    return np.concatenate([rev, zeros], axis=-1)


def _logsumexp(a: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def mtlr_loss(
    f: np.ndarray, t: float, event: int, bins: TimeBins
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of one subject with its gradient in f.

    Uncensored subjects commit to the sequence of their event bin; censored
    subjects sum the probabilities of all sequences whose event bin lies
    strictly after the bin containing the censoring time. Inputs must be
    finite; K = len(f) = bins.k.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (bins.k,):
        raise ValueError(f"logits shape {f.shape} != (K,) with K={bins.k}")
    if not np.all(np.isfinite(f)):
        raise ValueError("logits must be finite")
    loss, grad = mtlr_loss_batch(f[None, :], np.array([t]), np.array([event]), bins)
    return float(loss[0]), grad[0]


def mtlr_loss_batch(
    f: np.ndarray, t: np.ndarray, event: np.ndarray, bins: TimeBins
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized mtlr_loss over a batch: returns (losses (B,), grads (B, K))."""
    f = np.asarray(f, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    event = np.asarray(event, dtype=np.int64)
    if f.ndim != 2 or f.shape[1] != bins.k:
        raise ValueError(f"batch logits must be (B, {bins.k}), got {f.shape}")
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    if not np.all(np.isfinite(f)):
        raise ValueError("logits must be finite")
    batch, k = f.shape

    scores = _suffix_scores(f)  # (B, K+1)
    log_z = _logsumexp(scores, axis=-1)  # (B,)
    log_p = scores - log_z[:, None]
    p = np.exp(log_p)
    # Gradient building block: d s_k / d f_j = [j >= k] for k <= K, so the
    # partition term of d loss / d f_j is sum_{k <= j} p_k.
    cum_p = np.cumsum(p, axis=-1)[:, :k]

    m = np.searchsorted(bins.edges, t, side="left") + 1  # event/censor bin, 1-based
    losses = np.empty(batch)
    grads = np.empty((batch, k))
    for i in range(batch):
        if event[i] == 1:
            target = m[i]
            losses[i] = -scores[i, target - 1] + log_z[i]
            indicator = np.zeros(k)
            if target <= k:
                indicator[target - 1 :] = 1.0
            grads[i] = cum_p[i] - indicator
        else:
            first = min(m[i] + 1, k + 1)  # consistent sequences: k' >= first
            sel = scores[i, first - 1 :]
            log_w = _logsumexp(sel, axis=-1)
            losses[i] = -log_w + log_z[i]
            q = np.zeros(k + 1)
            q[first - 1 :] = np.exp(sel - log_w)
            grads[i] = cum_p[i] - np.cumsum(q)[:k]
    return losses, grads


def mtlr_probabilities(f: np.ndarray, bins: TimeBins) -> np.ndarray:
    """Probabilities of the K+1 sequences (event in bin 1..K, or beyond)."""
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    scores = _suffix_scores(np.atleast_2d(f))
    log_z = _logsumexp(scores, axis=-1, keepdims=True)
    p = np.exp(scores - log_z)
    return p[0] if single else p


def mtlr_survival(f: np.ndarray, bins: TimeBins) -> np.ndarray:
    """Survival probabilities S(tau_k) = P(event after bin k), k = 1..K."""
    p = np.atleast_2d(mtlr_probabilities(f, bins))
    surv = 1.0 - np.cumsum(p, axis=-1)[:, : bins.k]
    surv = np.clip(surv, 0.0, 1.0)
    return surv[0] if np.asarray(f).ndim == 1 else surv


def mtlr_risk(f: np.ndarray, bins: TimeBins) -> np.ndarray | float:
    """Scalar risk: negated mass of the survival curve, -sum_k S(tau_k)."""
    surv = mtlr_survival(f, bins)
    if surv.ndim == 1:
        return float(-surv.sum())
    return -surv.sum(axis=-1)
