"""Regularized EM imputation by iterated ridge regression.

Each sweep fills every missing cell with its conditional Gaussian mean given
the observed cells of its row, using ridge-stabilized regression coefficients
``B = (S_oo + ridge*I)^-1 S_om``, then re-estimates the mean and covariance
from the completed matrix. With ``ridge = 0`` this is plain EM for a
multivariate normal (without the conditional-covariance correction).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dataset import Dataset
from .errors import DataError, ImputationError


@dataclass(frozen=True)
class RemConfig:
    ridge: float = 1e-4
    max_sweeps: int = 100
    rel_tolerance: float = 1e-4
    min_variance: float = 1e-8

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")
        if not self.min_variance > 0:
            raise ValueError("min_variance must be positive")


@dataclass(frozen=True, eq=False)
class ImputationResult:
    """Completed data plus the fitted Gaussian.

    ``history`` holds one ``(sweep, max relative change, penalized
    log-likelihood)`` triple per sweep.
    """

    completed: Dataset
    sweeps_used: int
    final_change: float
    mu: np.ndarray
    sigma: np.ndarray
    history: list = field(default_factory=list)


def _check(data: Dataset) -> None:
    if data.n_rows < 2:
        raise DataError("imputation needs at least two rows")
    _check_columns(data)


def mean_initialize(data: Dataset) -> Dataset:
    """Replace each missing cell by its feature's observed mean."""
    _check_columns(data)
    if not data.n_missing:
        return data
    x = np.array(data.features)
    means = np.nanmean(x, axis=0)
    r, c = np.nonzero(data.missing)
    x[r, c] = means[c]
    return data.with_features(x)


def _check_columns(data: Dataset) -> None:
    empty = np.flatnonzero(data.missing.all(axis=0))
    if len(empty):
        raise DataError(f"features with no observed value: {[data.feature_names[j] for j in empty]}")


def _moments(x: np.ndarray, min_variance: float) -> tuple:
    mu = x.mean(axis=0)
    d = x - mu
    sigma = d.T @ d / x.shape[0]
    diag = np.diagonal(sigma).copy()
    np.fill_diagonal(sigma, np.maximum(diag, min_variance))
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ImputationError("non-finite mean or covariance")
    return mu, sigma


@njit(cache=True)
def _chol_solve(a, b):
    """Solve a @ out = b for symmetric positive (semi)definite ``a``."""
    n = a.shape[0]
    lo = np.zeros((n, n))
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(a[i, i]))
    floor = 1e-13 * max(scale, 1e-300)
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= lo[j, k] * lo[j, k]
        if s <= floor:
            s = floor
        lo[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= lo[i, k] * lo[j, k]
            lo[i, j] = t / lo[j, j]
    m = b.shape[1]
    out = np.empty((n, m))
    for c in range(m):
        z = np.empty(n)
        for i in range(n):
            t = b[i, c]
            for k in range(i):
                t -= lo[i, k] * z[k]
            z[i] = t / lo[i, i]
        for i in range(n - 1, -1, -1):
            t = z[i]
            for k in range(i + 1, n):
                t -= lo[k, i] * out[k, c]
            out[i, c] = t / lo[i, i]
    return out


@njit(cache=True)
def _e_step(x, miss, mu, sigma, ridge):
    l, n = x.shape
    out = x.copy()
    for r in range(l):
        nm = 0
        for j in range(n):
            if miss[r, j]:
                nm += 1
        if nm == 0:
            continue
        no = n - nm
        oi = np.empty(no, dtype=np.int64)
        mi = np.empty(nm, dtype=np.int64)
        a = 0
        b = 0
        for j in range(n):
            if miss[r, j]:
                mi[b] = j
                b += 1
            else:
                oi[a] = j
                a += 1
        if no == 0:
            for q in range(nm):
                out[r, mi[q]] = mu[mi[q]]
            continue
        s_oo = np.empty((no, no))
        s_om = np.empty((no, nm))
        for p in range(no):
            for q in range(no):
                s_oo[p, q] = sigma[oi[p], oi[q]]
            s_oo[p, p] += ridge
            for q in range(nm):
                s_om[p, q] = sigma[oi[p], mi[q]]
        coef = _chol_solve(s_oo, s_om)
        for q in range(nm):
            v = mu[mi[q]]
            for p in range(no):
                v += (x[r, oi[p]] - mu[oi[p]]) * coef[p, q]
            out[r, mi[q]] = v
    return out


def regression_coefficients(sigma, observed, missing, ridge: float) -> np.ndarray:
    """Ridge regression coefficients of the ``missing`` block on the ``observed`` one."""
    sigma = np.asarray(sigma, dtype=np.float64)
    o = np.asarray(observed, dtype=np.int64)
    m = np.asarray(missing, dtype=np.int64)
    a = sigma[np.ix_(o, o)] + ridge * np.eye(len(o))
    return np.linalg.solve(a, sigma[np.ix_(o, m)])


def penalized_loglik(x, mu, sigma, ridge: float, min_variance: float = 1e-8) -> float:
    """Gaussian log-likelihood of a completed matrix minus a ridge penalty.

    The penalty is ``ridge`` times the summed squared ridge-regression
    coefficients of each feature on all the others. Eigenvalues of ``sigma``
    are floored at ``min_variance`` so degenerate (e.g. exactly collinear)
    data gives a finite value. With ``ridge = 0`` this is the plain
    log-likelihood.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise DataError("penalized_loglik needs finite inputs")
    n = len(mu)
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
    w = np.maximum(w, min_variance)
    d = (x - mu) @ v
    maha = np.sum(d * d / w, axis=1)
    ll = float(-0.5 * np.sum(maha) - 0.5 * x.shape[0] * (n * math.log(2 * math.pi) + np.sum(np.log(w))))
    if ridge == 0 or n < 2:
        return ll
    penalty = 0.0
    for j in range(n):
        rest = np.delete(np.arange(n), j)
        beta = regression_coefficients(sigma, rest, [j], ridge)
        penalty += float(np.sum(beta * beta))
    return ll - ridge * penalty


def rem_impute(data: Dataset, config: RemConfig = RemConfig()) -> ImputationResult:
    """Impute missing cells by regularized EM.

    Iterates until the largest relative change ``|delta| / (1 + |value|)`` of
    any imputed cell is at most ``config.rel_tolerance`` or ``max_sweeps``
    sweeps have run. Observed cells are never modified.
    """
    _check(data)
    miss = np.ascontiguousarray(data.missing)
    x = np.ascontiguousarray(mean_initialize(data).features)
    mu, sigma = _moments(x, config.min_variance)
    if not miss.any():
        return ImputationResult(data, 0, 0.0, mu, sigma, [])
    history = []
    change = math.inf
    sweep = 0
    for sweep in range(1, config.max_sweeps + 1):
        new = _e_step(x, miss, mu, sigma, float(config.ridge))
        if not np.all(np.isfinite(new)):
            raise ImputationError(f"non-finite imputed values in sweep {sweep}")
        change = float(np.max(np.abs(new[miss] - x[miss]) / (1.0 + np.abs(new[miss]))))
        x = new
        mu, sigma = _moments(x, config.min_variance)
        history.append((sweep, change, penalized_loglik(x, mu, sigma, config.ridge, config.min_variance)))
        if change <= config.rel_tolerance:
            break
    # observed cells are copied back bit for bit
    x[~miss] = data.features[~miss]
    completed = Dataset(x, np.zeros_like(miss), data.labels, data.name, data.feature_names)
    return ImputationResult(completed, sweep, change, mu, sigma, history)


def impute_with_model(data: Dataset, mu, sigma, ridge: float = 1e-4) -> Dataset:
    """Single E-step with a frozen Gaussian, e.g. for test rows."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != (data.n_features,) or sigma.shape != (data.n_features,) * 2:
        raise DataError("mean/covariance do not match the number of features")
    if not data.n_missing:
        return data
    x = np.where(data.missing, 0.0, data.features)
    out = _e_step(np.ascontiguousarray(x), np.ascontiguousarray(data.missing), mu, sigma, float(ridge))
    return Dataset(out, np.zeros_like(data.missing), data.labels, data.name, data.feature_names)


def write_trace(result: ImputationResult, path) -> None:
    """Per-sweep diagnostics as CSV: sweep, final_change, penalized_loglik."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "final_change", "penalized_loglik"])
        for sweep, change, pll in result.history:
            w.writerow([sweep, format(change, ".10g"), format(pll, ".10g")])
