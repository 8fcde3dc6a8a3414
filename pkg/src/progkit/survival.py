"""Censored survival regression: Weibull AFT and Cox proportional hazards.

Both fitters run damped Newton ascent on the exact log-likelihood with
analytic gradients and Hessians, z-scoring continuous covariates internally
and reporting coefficients and covariances on the raw scale. Ties in the
Cox partial likelihood use the Efron correction. Concordance follows
Harrell: pairs are comparable when the earlier time is an observed event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError, FitError, SeparationError

_MAX_ITER = 200
_GRAD_TOL = 1e-7
_MAX_HALVINGS = 50
_ARMIJO = 1e-4
_SEPARATION_BOUND = 50.0
_SEPARATION_SOFT = 10.0


@dataclass
class CohortTable:
    """Patient survival table: covariates plus (time, event) per subject.

    Covariates may hold NaN for missing values until impute_missing is
    applied; times must be positive and events binary.
    """

    ids: list[str]
    covariates: pd.DataFrame
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self) -> None:
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event = np.asarray(self.event)
        n = len(self.ids)
        if len(self.covariates) != n or len(self.time) != n or len(self.event) != n:
            raise DataError(
                f"cohort table misaligned: {n} ids, {len(self.covariates)} covariate rows, "
                f"{len(self.time)} times, {len(self.event)} events"
            )
        if len(set(self.ids)) != n:
            raise DataError("cohort table has duplicate patient ids")
        if not np.all(np.isfinite(self.time)) or not np.all(self.time > 0):
            raise DataError("survival times must be finite and strictly positive")
        ev = np.unique(self.event)
        if not np.all(np.isin(ev, [0, 1])):
            raise DataError(f"event indicators must be 0 or 1, got values {ev.tolist()}")
        self.event = self.event.astype(np.int64)
        dupes = self.covariates.columns[self.covariates.columns.duplicated()]
        if len(dupes):
            raise DataError(f"duplicate covariate columns: {list(dupes)}")
        self.covariates = self.covariates.reset_index(drop=True).astype(np.float64)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.covariates.columns)

    @property
    def missing_mask(self) -> np.ndarray:
        return self.covariates.isna().to_numpy()

    def subset_columns(self, columns: list[str]) -> "CohortTable":
        unknown = [c for c in columns if c not in self.covariates.columns]
        if unknown:
            raise DataError(f"unknown covariate columns: {unknown}")
        return CohortTable(
            ids=list(self.ids),
            covariates=self.covariates[list(columns)].copy(),
            time=self.time.copy(),
            event=self.event.copy(),
        )

    def subset_rows(self, mask: np.ndarray) -> "CohortTable":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (len(self.ids),):
            raise DataError(f"row mask shape {mask.shape} != ({len(self.ids)},)")
        return CohortTable(
            ids=[pid for pid, keep in zip(self.ids, mask) if keep],
            covariates=self.covariates.loc[mask].copy(),
            time=self.time[mask].copy(),
            event=self.event[mask].copy(),
        )


def cohort_from_csv(path: str) -> CohortTable:
    """Read a cohort CSV with patient_id, covariates, time, event columns."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"cohort CSV not found: {path}") from None
    for col in ("patient_id", "time", "event"):
        if col not in frame.columns:
            raise DataError(f"cohort CSV {path} lacks required column {col!r}")
    covar_cols = [c for c in frame.columns if c not in ("patient_id", "time", "event")]
    return CohortTable(
        ids=[str(v) for v in frame["patient_id"]],
        covariates=frame[covar_cols].copy(),
        time=frame["time"].to_numpy(dtype=np.float64),
        event=frame["event"].to_numpy(),
    )


def cohort_to_csv(table: CohortTable, path: str) -> None:
    out = table.covariates.copy()
    out.insert(0, "patient_id", table.ids)
    out["time"] = table.time
    out["event"] = table.event
    out.to_csv(path, index=False)


def impute_missing(table: CohortTable, value: float = -1.0) -> CohortTable:
    """Replace missing covariate cells with a sentinel value."""
    return CohortTable(
        ids=list(table.ids),
        covariates=table.covariates.fillna(value),
        time=table.time.copy(),
        event=table.event.copy(),
    )


def _require_complete(table: CohortTable) -> None:
    mask = table.missing_mask
    if mask.any():
        bad = [c for c, any_na in zip(table.columns, mask.any(axis=0)) if any_na]
        raise DataError(f"covariates contain missing values in columns {bad}; impute first")


def _standardize_columns(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-score continuous columns; columns with <= 3 distinct values pass through.

    Returns (x_std, means, stds) with means 0 / stds 1 for pass-through
    columns, so raw = std * sigma + mu holds columnwise.
    """
    means = np.zeros(x.shape[1])
    stds = np.ones(x.shape[1])
    for j in range(x.shape[1]):
        col = x[:, j]
        if len(np.unique(col)) > 3:
            sd = col.std()
            if sd > 1e-12:
                means[j] = col.mean()
                stds[j] = sd
    return (x - means) / stds, means, stds


@dataclass
class WeibullAftModel:
    """Accelerated-failure-time Weibull fit on the raw covariate scale.

    Scale per subject: lambda_i = exp(beta0 + beta . x_i); shape rho is
    shared. cov orders parameters [beta0, beta..., log_rho].
    """

    columns: tuple[str, ...]
    beta0: float
    beta: np.ndarray
    log_rho: float
    cov: np.ndarray
    loglik: float
    n_iter: int
    n_events: int
    rho_fixed: bool = False

    @property
    def rho(self) -> float:
        return math.exp(self.log_rho)

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} covariates, got {x.shape[1]}")
        return self.beta0 + x @ self.beta


@dataclass
class CoxPhModel:
    """Cox proportional-hazards fit (Efron ties) on the raw covariate scale."""

    columns: tuple[str, ...]
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    n_iter: int
    n_events: int

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} covariates, got {x.shape[1]}")
        return x @ self.beta


def weibull_loglik(
    x: np.ndarray, time: np.ndarray, event: np.ndarray, theta: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weibull AFT log-likelihood with gradient and Hessian.

    theta = [beta0, beta_1..p, gamma] with rho = exp(gamma) and
    lambda_i = exp(beta0 + beta . x_i). Works on whatever scale x is given.
    """
    x = np.asarray(x, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.float64)
    n, p = x.shape
    design = np.column_stack([np.ones(n), x])
    b = theta[: p + 1]
    gamma = theta[p + 1]

    # Wild line-search trials can overflow exp(); np.exp saturates to inf,
    # the loglik goes non-finite and the step is rejected, so keep numpy
    # quiet rather than letting it raise or warn.
    with np.errstate(over="ignore", invalid="ignore"):
        # Keep rho a numpy scalar: operations saturate to inf rather than
        # raising OverflowError the way Python floats do.
        rho = np.exp(np.float64(gamma))
        log_t = np.log(time)
        eta = design @ b
        w = rho * (log_t - eta)
        z = np.exp(w)

        loglik = float(np.sum(event * (gamma + w - log_t)) - np.sum(z))

        d_eta = rho * (z - event)
        grad_b = design.T @ d_eta
        grad_g = float(np.sum(event * (1.0 + w)) - np.sum(z * w))
        grad = np.concatenate([grad_b, [grad_g]])

        h_bb = -(rho**2) * (design.T * z) @ design
        h_bg = design.T @ (rho * (z - event + z * w))
        h_gg = float(np.sum(event * w) - np.sum(z * w * w) - np.sum(z * w))
    hess = np.zeros((p + 2, p + 2))
    hess[: p + 1, : p + 1] = h_bb
    hess[: p + 1, p + 1] = h_bg
    hess[p + 1, : p + 1] = h_bg
    hess[p + 1, p + 1] = h_gg
    return loglik, grad, hess


def _newton_ascent(
    objective,
    theta0: np.ndarray,
    free: np.ndarray,
    context: str,
    separation_columns: tuple[str, ...] | None = None,
    separation_slice: slice | None = None,
) -> tuple[np.ndarray, float, np.ndarray, int]:
    """Maximize objective(theta) -> (loglik, grad, hess) by damped Newton.

    ``free`` masks the coordinates being optimized; the rest stay fixed.
    Returns (theta, loglik, hessian, iterations).
    """
    theta = theta0.copy()
    loglik, grad, hess = objective(theta)
    if not np.isfinite(loglik):
        raise FitError(f"{context}: log-likelihood not finite at the starting point")

    for iteration in range(1, _MAX_ITER + 1):
        g = grad[free]
        if np.abs(g).max() < _GRAD_TOL:
            return theta, loglik, hess, iteration - 1
        h = hess[np.ix_(free, free)]
        # Far from the optimum -h need not be positive definite, and a raw
        # Newton solve can point downhill. Escalate a ridge until Cholesky
        # succeeds, which guarantees an ascent direction.
        eye = np.eye(len(g))
        ridge = 0.0
        ridge_cap = 1e6 * (1.0 + float(np.abs(h).max()))
        while True:
            try:
                np.linalg.cholesky(-h + ridge * eye)
                step = np.linalg.solve(-h + ridge * eye, g)
                break
            except np.linalg.LinAlgError:
                ridge = max(1e-8, ridge * 100.0)
                if ridge > ridge_cap:
                    raise FitError(f"{context}: Hessian is singular beyond repair") from None

        # Near the optimum the promised gain g.step/2 sinks below the float64
        # evaluation noise of the objective; Armijo then rejects steps on
        # rounding error alone and the gradient never shrinks further. Accept
        # the full Newton step on a not-measurably-worse trial instead, which
        # lets quadratic convergence push the gradient to machine precision.
        predicted = float(g @ step)
        noise = 8.0 * np.finfo(float).eps * (1.0 + abs(loglik))
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            trial = theta.copy()
            trial[free] = theta[free] + scale * step
            trial_ll, trial_grad, trial_hess = objective(trial)
            armijo_ok = trial_ll >= loglik + _ARMIJO * scale * predicted
            stalled_ok = predicted <= noise and trial_ll >= loglik - noise
            if np.isfinite(trial_ll) and (armijo_ok or stalled_ok):
                theta, loglik, grad, hess = trial, trial_ll, trial_grad, trial_hess
                break
            scale /= 2.0
        else:
            raise FitError(f"{context}: line search failed after {_MAX_HALVINGS} halvings")

        if separation_columns is not None:
            betas = theta[separation_slice]
            worst = int(np.argmax(np.abs(betas)))
            if abs(betas[worst]) > _SEPARATION_BOUND:
                raise SeparationError(
                    f"{context}: covariate {separation_columns[worst]!r} separates the data "
                    f"(standardized coefficient {betas[worst]:.1f} is unbounded)"
                )

    raise FitError(f"{context}: no convergence within {_MAX_ITER} iterations")


def fit_weibull_aft(table: CohortTable, fix_rho: float | None = None) -> WeibullAftModel:
    """Fit the Weibull AFT model by Newton MLE.

    Continuous covariates are z-scored internally; reported coefficients and
    covariance are mapped back to the raw scale. ``fix_rho`` pins the shape
    (1.0 gives the exponential model) and zeroes its covariance row.
    """
    _require_complete(table)
    n_events = int(table.event.sum())
    if n_events == 0:
        raise FitError("cannot fit a survival model with zero observed events")
    x_raw = table.covariates.to_numpy(dtype=np.float64)
    x_std, means, stds = _standardize_columns(x_raw)
    n, p = x_std.shape

    theta0 = np.zeros(p + 2)
    theta0[0] = math.log(float(table.time.mean()))
    free = np.ones(p + 2, dtype=bool)
    if fix_rho is not None:
        if fix_rho <= 0:
            raise ValueError(f"fix_rho must be positive, got {fix_rho}")
        theta0[p + 1] = math.log(fix_rho)
        free[p + 1] = False

    def objective(theta: np.ndarray):
        return weibull_loglik(x_std, table.time, table.event, theta)

    theta, loglik, hess, n_iter = _newton_ascent(
        objective,
        theta0,
        free,
        context="weibull_aft",
        separation_columns=table.columns if p else None,
        separation_slice=slice(1, p + 1),
    )

    cov_std = np.zeros((p + 2, p + 2))
    h_free = hess[np.ix_(free, free)]
    try:
        cov_free = np.linalg.inv(-h_free)
    except np.linalg.LinAlgError:
        raise FitError("weibull_aft: information matrix is singular at the optimum") from None
    cov_std[np.ix_(free, free)] = cov_free
    cov_std = (cov_std + cov_std.T) / 2.0

    # Raw-scale reparameterization: beta_j = b_j / sigma_j,
    # beta0 = b0 - sum b_j mu_j / sigma_j, gamma unchanged.
    jac = np.eye(p + 2)
    for j in range(p):
        jac[0, 1 + j] = -means[j] / stds[j]
        jac[1 + j, 1 + j] = 1.0 / stds[j]
    cov_raw = jac @ cov_std @ jac.T
    cov_raw = (cov_raw + cov_raw.T) / 2.0

    b = theta[: p + 1]
    beta_raw = b[1:] / stds
    beta0_raw = float(b[0] - np.sum(b[1:] * means / stds))
    return WeibullAftModel(
        columns=table.columns,
        beta0=beta0_raw,
        beta=beta_raw,
        log_rho=float(theta[p + 1]),
        cov=cov_raw,
        loglik=loglik,
        n_iter=n_iter,
        n_events=n_events,
        rho_fixed=fix_rho is not None,
    )


def cox_partial_loglik(
    x: np.ndarray, time: np.ndarray, event: np.ndarray, beta: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Efron-corrected Cox partial log-likelihood, gradient and Hessian.

    Works on whatever covariate scale x is given; stable under linear
    predictor shifts (the maximum is subtracted before exponentiation).
    """
    x = np.asarray(x, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.int64)
    n, p = x.shape

    order = np.argsort(time, kind="stable")
    ts = time[order]
    ds = event[order]
    xs = x[order]

    eta = xs @ beta
    eta_c = eta - eta.max()
    e = np.exp(eta_c)
    ex = e[:, None] * xs
    exx = e[:, None, None] * (xs[:, :, None] * xs[:, None, :])
    s0 = np.cumsum(e[::-1])[::-1]
    s1 = np.cumsum(ex[::-1], axis=0)[::-1]
    s2 = np.cumsum(exx[::-1], axis=0)[::-1]

    loglik = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))

    event_times = np.unique(ts[ds == 1])
    starts = np.searchsorted(ts, event_times, side="left")
    for tau, a in zip(event_times, starts):
        dead = (ts == tau) & (ds == 1)
        d = int(dead.sum())
        b_sum = e[dead].sum()
        s1b = ex[dead].sum(axis=0)
        s2b = exx[dead].sum(axis=0)

        loglik += float(eta_c[dead].sum())
        grad += xs[dead].sum(axis=0)
        for ell in range(d):
            r = ell / d
            phi = s0[a] - r * b_sum
            # phi > 0 holds in exact arithmetic; it reaches 0 only when a
            # wild trial point underflows every risk weight. Returning -inf
            # makes the line search reject the step (a +inf from log(0)
            # would be accepted as an improvement).
            if not np.isfinite(phi) or phi <= 0.0:
                return float("-inf"), np.zeros(p), np.zeros((p, p))
            u = (s1[a] - r * s1b) / phi
            loglik -= math.log(phi)
            grad -= u
            hess -= (s2[a] - r * s2b) / phi - np.outer(u, u)

    return loglik, grad, hess


def fit_cox_ph(table: CohortTable) -> CoxPhModel:
    """Fit Cox proportional hazards with Efron tie handling.

    Continuous covariates are z-scored internally; coefficients and the
    covariance return on the raw scale. Monotone likelihood (a covariate
    that perfectly separates event order) raises SeparationError naming
    the offending column.
    """
    _require_complete(table)
    n_events = int(table.event.sum())
    if n_events == 0:
        raise FitError("cannot fit a survival model with zero observed events")
    x_raw = table.covariates.to_numpy(dtype=np.float64)
    if x_raw.shape[1] == 0:
        raise FitError("cox_ph requires at least one covariate")
    x_std, means, stds = _standardize_columns(x_raw)
    p = x_std.shape[1]

    def objective(beta: np.ndarray):
        return cox_partial_loglik(x_std, table.time, table.event, beta)

    beta_std, loglik, hess, n_iter = _newton_ascent(
        objective,
        np.zeros(p),
        np.ones(p, dtype=bool),
        context="cox_ph",
        separation_columns=table.columns,
        separation_slice=slice(0, p),
    )

    try:
        cov_std = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        raise FitError("cox_ph: information matrix is singular at the optimum") from None

    # A separating binary covariate saturates the gradient below tolerance
    # near beta ~ 17 without ever tripping the in-loop growth bound. The
    # signature of that monotone likelihood is a huge standardized
    # coefficient whose standard error is larger still.
    se_std = np.sqrt(np.clip(np.diag(cov_std), 0.0, None))
    runaway = (np.abs(beta_std) > _SEPARATION_SOFT) & (se_std > np.abs(beta_std))
    if runaway.any():
        worst = int(np.argmax(np.where(runaway, np.abs(beta_std), -np.inf)))
        raise SeparationError(
            f"cox_ph: covariate {table.columns[worst]!r} separates the data "
            f"(standardized coefficient {beta_std[worst]:.1f} with standard error "
            f"{se_std[worst]:.1f})"
        )
    scale = np.diag(1.0 / stds)
    cov_raw = scale @ cov_std @ scale
    return CoxPhModel(
        columns=table.columns,
        beta=beta_std / stds,
        cov=(cov_raw + cov_raw.T) / 2.0,
        loglik=loglik,
        n_iter=n_iter,
        n_events=n_events,
    )


def predict_risk(model: WeibullAftModel | CoxPhModel, x: np.ndarray) -> np.ndarray:
    """Relative risk score: higher means expected earlier event.

    Cox: the linear predictor beta . x. Weibull AFT: the negated scale
    predictor -(beta0 + beta . x), since larger scale means longer survival.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise DataError("risk prediction requires finite covariates; impute first")
    if isinstance(model, CoxPhModel):
        return model.linear_predictor(x)
    return -model.linear_predictor(x)


def concordance_index(risk: np.ndarray, time: np.ndarray, event: np.ndarray) -> float:
    """Harrell's C: fraction of comparable pairs ordered correctly by risk.

    A pair is comparable when the earlier time is an observed event; risk
    ties count half. Raises ValueError when no pair is comparable.
    """
    risk = np.asarray(risk, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event)
    if not (len(risk) == len(time) == len(event)):
        raise ValueError(
            f"risk ({len(risk)}), time ({len(time)}) and event ({len(event)}) disagree"
        )
    ev = np.unique(event)
    if not np.all(np.isin(ev, [0, 1])):
        raise ValueError(f"event indicators must be 0 or 1, got {ev.tolist()}")
    if not np.all(np.isfinite(risk)):
        raise ValueError("risk scores must be finite")

    comparable = (time[:, None] < time[None, :]) & (event[:, None] == 1)
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise ValueError("concordance undefined: no comparable pairs")
    higher = risk[:, None] > risk[None, :]
    tied = risk[:, None] == risk[None, :]
    concordant = float((comparable & higher).sum())
    half = float((comparable & tied).sum())
    return (concordant + 0.5 * half) / n_comp


def coefficient_significance(model: WeibullAftModel | CoxPhModel) -> pd.DataFrame:
    """Wald tests per covariate: coefficient, SE, z and two-sided p."""
    if isinstance(model, CoxPhModel):
        coefs = model.beta
        variances = np.diag(model.cov)
    else:
        coefs = model.beta
        variances = np.diag(model.cov)[1 : 1 + len(model.beta)]
    if np.any(variances < 0) or not np.all(np.isfinite(variances)):
        raise FitError("coefficient variances are invalid; the fit is degenerate")
    se = np.sqrt(variances)
    if np.any(se == 0):
        raise FitError("zero standard error; the fit is degenerate")
    z = coefs / se
    p = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in z])
    return pd.DataFrame(
        {
            "covariate": list(model.columns),
            "coef": coefs,
            "se": se,
            "z": z,
            "p": p,
        }
    )


def calibration_sweep(
    table: CohortTable,
    feature_sets: list[list[str]],
    model: str,
    train_mask: np.ndarray,
) -> pd.DataFrame:
    """Fit per feature subset on the training rows, score C on the rest.

    Rows come back in input order with status "ok" or the failure reason;
    failed fits leave cindex as NaN and never abort the sweep.
    """
    if model not in ("weibull", "cox"):
        raise ValueError(f"model must be 'weibull' or 'cox', got {model!r}")
    train_mask = np.asarray(train_mask, dtype=bool)
    if train_mask.shape != (len(table.ids),):
        raise ValueError(f"train_mask shape {train_mask.shape} != ({len(table.ids)},)")
    if train_mask.all() or not train_mask.any():
        raise ValueError("train_mask must leave a non-empty validation remainder")

    rows = []
    for features in feature_sets:
        entry = {"features": "+".join(features), "cindex": math.nan, "status": "ok"}
        try:
            sub = table.subset_columns(list(features))
            train = sub.subset_rows(train_mask)
            val = sub.subset_rows(~train_mask)
            fitted = fit_weibull_aft(train) if model == "weibull" else fit_cox_ph(train)
            risks = predict_risk(fitted, val.covariates.to_numpy(dtype=np.float64))
            entry["cindex"] = concordance_index(risks, val.time, val.event)
        except Exception as exc:  # noqa: BLE001 - report the failure, keep sweeping
            entry["status"] = f"failed: {exc}"
        rows.append(entry)
    return pd.DataFrame(rows, columns=["features", "cindex", "status"])


def simulate_weibull_cohort(
    n: int,
    beta0: float,
    beta: np.ndarray,
    rho: float,
    censor_frac: float,
    seed: int,
    kinds: tuple[str, ...] | None = None,
    names: tuple[str, ...] | None = None,
) -> CohortTable:
    """Draw a synthetic censored Weibull AFT cohort.

    Event times follow T = lambda * E^(1/rho) with lambda = exp(beta0 +
    beta . x) and E standard exponential. Censoring is independent and
    noninformative, tuned so the expected censored fraction equals
    censor_frac exactly. Covariates default to one Bernoulli(0.5) column
    followed by standard normals.
    """
    beta = np.asarray(beta, dtype=np.float64)
    p = len(beta)
    if kinds is None:
        kinds = ("binary",) + ("normal",) * (p - 1) if p else ()
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(p))
    if len(kinds) != p or len(names) != p:
        raise ValueError("kinds and names must match the coefficient count")
    if not 0 <= censor_frac < 1:
        raise ValueError(f"censor_frac must lie in [0, 1), got {censor_frac}")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")

    rng = np.random.default_rng(seed)
    cols = []
    for kind in kinds:
        if kind == "binary":
            cols.append(rng.integers(0, 2, size=n).astype(np.float64))
        elif kind == "normal":
            cols.append(rng.standard_normal(n))
        else:
            raise ValueError(f"unknown covariate kind {kind!r}")
    x = np.column_stack(cols) if cols else np.zeros((n, 0))

    lam = np.exp(beta0 + x @ beta)
    t_event = lam * rng.exponential(size=n) ** (1.0 / rho)
    if censor_frac == 0:
        time = t_event
        event = np.ones(n, dtype=np.int64)
    else:
        # P(censored) = a / (1 + a) with a = (lam/lam_c)^rho.
        a = censor_frac / (1.0 - censor_frac)
        lam_c = lam * a ** (-1.0 / rho)
        t_cens = lam_c * rng.exponential(size=n) ** (1.0 / rho)
        event = (t_event <= t_cens).astype(np.int64)
        time = np.minimum(t_event, t_cens)

    return CohortTable(
        ids=[f"SIM-{k:05d}" for k in range(n)],
        covariates=pd.DataFrame({name: x[:, j] for j, name in enumerate(names)}),
        time=time,
        event=event,
    )
