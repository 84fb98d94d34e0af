"""RBF kernel, SMO solver for the soft-margin and class-weighted SVM dual, prediction.

The dual solved here is::

    min_a  1/2 a^T Q a - e^T a
    s.t.   y^T a = 0,   0 <= a_i <= C_i

with ``Q_ij = y_i y_j K(x_i, x_j)`` and ``C_i = (c_pos if y_i = +1 else c_neg) * w_i``.
Setting ``c_pos == c_neg`` and unit weights gives the ordinary soft-margin SVM.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .errors import DataError, SolverError

TAU = 1e-12


@dataclass(frozen=True)
class KernelParams:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class SvmParams:
    """Penalties per class, kernel and stopping rule.

    ``cache_mb`` bounds the kernel-row cache and ``shrinking`` toggles the
    active-set heuristic; neither changes the optimum.
    """

    c_pos: float
    c_neg: float
    kernel: KernelParams
    tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    cache_mb: float = field(default=512.0, compare=False)
    shrinking: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not (self.c_pos > 0 and self.c_neg > 0):
            raise ValueError(f"penalties must be positive, got c_pos={self.c_pos}, c_neg={self.c_neg}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    @classmethod
    def standard(cls, c: float, gamma: float, **kw) -> "SvmParams":
        """Unweighted soft-margin SVM, one penalty for both classes."""
        return cls(c, c, KernelParams(gamma), **kw)

    @property
    def gamma(self) -> float:
        return self.kernel.gamma


@dataclass(frozen=True, eq=False)
class SvmModel:
    """A trained (weighted) SVM.

    Attributes
    ----------
    sv_indices : ndarray of int
        Support-vector positions in the training set.
    alphas : ndarray
        Signed dual coefficients ``alpha_i * y_i`` of the support vectors.
    bias : float
    params : SvmParams
    sv_points : ndarray, shape (n_sv, n)
    converged : bool
        False when the iteration cap was hit before the KKT tolerance.
    """

    sv_indices: np.ndarray
    alphas: np.ndarray
    bias: float
    params: SvmParams
    sv_points: np.ndarray
    converged: bool = True
    iterations: int = 0
    dual_objective: float = float("nan")

    @property
    def n_sv(self) -> int:
        return len(self.sv_indices)

    @property
    def n_features(self) -> int:
        return self.sv_points.shape[1]

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} features, got {x.shape[1]}")
        if np.isnan(x).any():
            raise DataError("cannot evaluate points with missing values")
        out = np.empty(x.shape[0])
        step = max(1, 2_000_000 // max(1, self.n_sv))
        for s in range(0, x.shape[0], step):
            k = kernel_matrix(x[s:s + step], self.sv_points, self.params.gamma)
            out[s:s + step] = k @ self.alphas + self.bias
        return out

    def predict(self, x) -> np.ndarray:
        # a score of exactly 0 goes to the majority (-1) class
        return np.where(self.decision_function(x) > 0, 1, -1)

    def full_alphas(self, n_train: int) -> np.ndarray:
        """Signed dual coefficients for every training point (zeros off the SVs)."""
        out = np.zeros(n_train)
        out[self.sv_indices] = self.alphas
        return out

    def with_indices(self, indices) -> "SvmModel":
        return replace(self, sv_indices=np.asarray(indices, dtype=np.int64))


# --------------------------------------------------------------------------
# kernel


def rbf_kernel(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    d = x - z
    return math.exp(-gamma * float(d @ d))


def kernel_matrix(a, b, gamma: float) -> np.ndarray:
    """RBF Gram matrix between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@njit(cache=True)
def _kernel_row(x, i, gamma, out):
    n, d = x.shape
    for t in range(n):
        s = 0.0
        for k in range(d):
            diff = x[i, k] - x[t, k]
            s += diff * diff
        out[t] = math.exp(-gamma * s)


@njit(cache=True)
def _fetch_row(x, gamma, i, cache, slot_of, row_of, stamp, clock):
    s = slot_of[i]
    if s < 0:
        s = np.argmin(stamp)
        old = row_of[s]
        if old >= 0:
            slot_of[old] = -1
        row_of[s] = i
        slot_of[i] = s
        _kernel_row(x, i, gamma, cache[s])
    stamp[s] = clock
    return s


@njit(cache=True)
def _reconstruct(x, y, alpha, grad, gamma, is_active, cache, slot_of, row_of, stamp, clock):
    """Recompute the gradient of the shrunk (inactive) variables from scratch."""
    l = x.shape[0]
    for t in range(l):
        if not is_active[t]:
            grad[t] = -1.0
    for j in range(l):
        if alpha[j] > 0:
            clock += 1
            kj = cache[_fetch_row(x, gamma, j, cache, slot_of, row_of, stamp, clock)]
            aj = alpha[j] * y[j]
            for t in range(l):
                if not is_active[t]:
                    grad[t] += y[t] * aj * kj[t]
    return clock


@njit(cache=True)
def _smo(x, y, cbox, gamma, eps, max_iter, n_slots, shrinking):
    l = x.shape[0]
    alpha = np.zeros(l)
    grad = -np.ones(l)
    cache = np.empty((n_slots, l))
    slot_of = -np.ones(l, dtype=np.int64)
    row_of = -np.ones(n_slots, dtype=np.int64)
    stamp = np.zeros(n_slots, dtype=np.int64)
    active = np.arange(l)
    is_active = np.ones(l, dtype=np.bool_)
    na = l
    unshrunk = False
    counter = min(l, 1000)
    clock = 0
    it = 0
    converged = False
    while it < max_iter:
        if shrinking:
            counter -= 1
            if counter == 0:
                counter = min(l, 1000)
                g1 = -np.inf
                g2 = -np.inf
                for p in range(na):
                    t = active[p]
                    if y[t] > 0:
                        if alpha[t] < cbox[t]:
                            g1 = max(g1, -grad[t])
                        if alpha[t] > 0:
                            g2 = max(g2, grad[t])
                    else:
                        if alpha[t] > 0:
                            g1 = max(g1, grad[t])
                        if alpha[t] < cbox[t]:
                            g2 = max(g2, -grad[t])
                if not unshrunk and g1 + g2 <= eps * 10:
                    # close to the end: restore everything once and shrink again
                    unshrunk = True
                    if na < l:
                        clock = _reconstruct(x, y, alpha, grad, gamma, is_active, cache,
                                             slot_of, row_of, stamp, clock)
                        for t in range(l):
                            active[t] = t
                            is_active[t] = True
                        na = l
                keep = 0
                for p in range(na):
                    t = active[p]
                    drop = False
                    if alpha[t] >= cbox[t]:
                        drop = -grad[t] > g1 if y[t] > 0 else -grad[t] > g2
                    elif alpha[t] <= 0:
                        drop = grad[t] > g2 if y[t] > 0 else grad[t] > g1
                    if drop:
                        is_active[t] = False
                    else:
                        active[keep] = t
                        keep += 1
                na = keep
        # first index: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for p in range(na):
            t = active[p]
            if y[t] > 0:
                if alpha[t] < cbox[t] and -grad[t] >= gmax:
                    gmax = -grad[t]
                    i = t
            else:
                if alpha[t] > 0 and grad[t] >= gmax:
                    gmax = grad[t]
                    i = t
        j = -1
        gmax2 = -np.inf
        if i >= 0:
            clock += 1
            si = _fetch_row(x, gamma, i, cache, slot_of, row_of, stamp, clock)
            ki = cache[si]
            # second index: second-order gain over I_low
            obj_min = np.inf
            for p in range(na):
                t = active[p]
                if y[t] > 0:
                    if alpha[t] > 0:
                        if grad[t] >= gmax2:
                            gmax2 = grad[t]
                        gd = gmax + grad[t]
                        if gd > 0:
                            quad = 2.0 - 2.0 * ki[t]
                            if quad <= 0:
                                quad = TAU
                            od = -(gd * gd) / quad
                            if od <= obj_min:
                                obj_min = od
                                j = t
                else:
                    if alpha[t] < cbox[t]:
                        if -grad[t] >= gmax2:
                            gmax2 = -grad[t]
                        gd = gmax - grad[t]
                        if gd > 0:
                            quad = 2.0 - 2.0 * ki[t]
                            if quad <= 0:
                                quad = TAU
                            od = -(gd * gd) / quad
                            if od <= obj_min:
                                obj_min = od
                                j = t
        if i < 0 or j < 0 or gmax + gmax2 < eps:
            if na < l:
                # optimal on the active set: check the full problem
                clock = _reconstruct(x, y, alpha, grad, gamma, is_active, cache,
                                     slot_of, row_of, stamp, clock)
                for t in range(l):
                    active[t] = t
                    is_active[t] = True
                na = l
                # re-check the full set before shrinking again
                counter = 2
                continue
            converged = True
            break
        clock += 1
        sj = _fetch_row(x, gamma, j, cache, slot_of, row_of, stamp, clock)
        ki = cache[slot_of[i]]
        kj = cache[sj]
        ci = cbox[i]
        cj = cbox[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        quad = 2.0 - 2.0 * ki[j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > ci - cj:
                if alpha[i] > ci:
                    alpha[i] = ci
                    alpha[j] = ci - diff
            else:
                if alpha[j] > cj:
                    alpha[j] = cj
                    alpha[i] = cj + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > ci:
                if alpha[i] > ci:
                    alpha[i] = ci
                    alpha[j] = total - ci
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > cj:
                if alpha[j] > cj:
                    alpha[j] = cj
                    alpha[i] = total - cj
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = (alpha[i] - ai_old) * y[i]
        daj = (alpha[j] - aj_old) * y[j]
        for p in range(na):
            t = active[p]
            grad[t] += y[t] * (ki[t] * dai + kj[t] * daj)
        it += 1
    if na < l:
        clock = _reconstruct(x, y, alpha, grad, gamma, is_active, cache, slot_of, row_of, stamp, clock)
    return alpha, grad, it, converged


def _bias(alpha, grad, y, cbox) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < cbox)
    if free.any():
        return float(-yg[free].mean())
    upper = alpha >= cbox
    lower = alpha <= 0
    ub_set = (upper & (y < 0)) | (lower & (y > 0))
    lb_set = (upper & (y > 0)) | (lower & (y < 0))
    ub = yg[ub_set].min() if ub_set.any() else np.inf
    lb = yg[lb_set].max() if lb_set.any() else -np.inf
    if not np.isfinite(ub):
        ub = lb
    if not np.isfinite(lb):
        lb = ub
    return float(-(ub + lb) / 2.0)


def box_bounds(y, params: SvmParams, instance_weights=None) -> np.ndarray:
    y = np.asarray(y)
    c = np.where(y > 0, params.c_pos, params.c_neg).astype(np.float64)
    if instance_weights is not None:
        w = np.asarray(instance_weights, dtype=np.float64)
        if w.shape != c.shape or np.any(~(w > 0)):
            raise DataError("instance weights must be positive, one per point")
        c = c * w
    return c


def smo_train(x, y, params: SvmParams, instance_weights=None) -> SvmModel:
    """Train a (class-weighted) RBF SVM by sequential minimal optimization.

    Parameters
    ----------
    x : array_like, shape (l, n)
        Complete training points.
    y : array_like, shape (l,)
        Labels in {-1, +1}; both classes must be present.
    params : SvmParams
    instance_weights : array_like, optional
        Per-point multipliers of the class penalty.

    Returns
    -------
    SvmModel
        ``converged`` is False (and a warning is issued) if ``max_iterations``
        pair updates did not reach the KKT tolerance.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DataError(f"bad shapes: x {x.shape}, y {y.shape}")
    if np.isnan(x).any():
        raise DataError("training points contain missing values; impute first")
    if not np.all((y == 1) | (y == -1)):
        raise DataError("labels must be -1 or +1")
    if not ((y == 1).any() and (y == -1).any()):
        raise SolverError("training set contains a single class")
    yf = y.astype(np.float64)
    cbox = box_bounds(y, params, instance_weights)
    l = x.shape[0]
    n_slots = int(min(l, max(2, params.cache_mb * 2**20 // (8 * l))))
    alpha, grad, iters, converged = _smo(x, yf, cbox, float(params.gamma), float(params.tolerance),
                                         int(params.max_iterations), n_slots, bool(params.shrinking))
    if not converged:
        warnings.warn(f"SMO stopped after {iters} iterations without reaching tolerance "
                      f"{params.tolerance}", RuntimeWarning, stacklevel=2)
    bias = _bias(alpha, grad, yf, cbox)
    sv = np.flatnonzero(alpha > 0)
    objective = 0.5 * alpha.sum() - 0.5 * float(alpha @ grad)
    return SvmModel(sv_indices=sv, alphas=alpha[sv] * yf[sv], bias=bias, params=params,
                    sv_points=x[sv].copy(), converged=bool(converged), iterations=int(iters),
                    dual_objective=objective)


def train_svm(x, y, c: float, gamma: float, **kw) -> SvmModel:
    """Ordinary soft-margin SVM with a single penalty ``c``."""
    return smo_train(x, y, SvmParams.standard(c, gamma, **kw))


def decision_value(model: SvmModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("decision_value takes a single feature vector")
    return float(model.decision_function(x[None, :])[0])


def predict(model: SvmModel, x) -> np.ndarray:
    return model.predict(x)


def dual_objective(alpha, y, k) -> float:
    """Dual objective ``sum(a) - 1/2 (a*y)^T K (a*y)`` (to be maximized)."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ np.asarray(k) @ ay)


def kkt_violation(model: SvmModel, x, y, instance_weights=None) -> float:
    """Largest KKT violation of the trained model over the training set."""
    y = np.asarray(y, dtype=np.float64)
    alpha = np.abs(model.full_alphas(len(y)))
    cbox = box_bounds(y, model.params, instance_weights)
    yf = y * model.decision_function(x)
    at_zero = alpha <= 0
    at_c = alpha >= cbox
    free = ~at_zero & ~at_c
    v = np.zeros(len(y))
    v[at_zero] = np.maximum(0.0, 1.0 - yf[at_zero])
    v[at_c] = np.maximum(0.0, yf[at_c] - 1.0)
    v[free] = np.abs(yf[free] - 1.0)
    return float(v.max())


def class_weights_from_counts(n_pos: int, n_neg: int, base_c: float) -> tuple:
    """Penalties inversely proportional to class size, ``c_pos*n_pos == c_neg*n_neg``."""
    if n_pos <= 0 or n_neg <= 0:
        raise ValueError(f"class counts must be positive, got {n_pos}, {n_neg}")
    total = n_pos + n_neg
    return base_c * total / (2.0 * n_pos), base_c * total / (2.0 * n_neg)


# --------------------------------------------------------------------------
# serialization


def _g(v: float) -> str:
    return format(float(v), ".17g")


def save_model(model: SvmModel, path) -> None:
    p = model.params
    lines = [
        f"gamma {_g(p.gamma)}",
        f"c_pos {_g(p.c_pos)}",
        f"c_neg {_g(p.c_neg)}",
        f"bias {_g(model.bias)}",
        f"tolerance {_g(p.tolerance)}",
        f"max_iterations {p.max_iterations}",
        f"n_features {model.n_features}",
        "sv_indices " + " ".join(str(int(i)) for i in model.sv_indices),
        "SV",
    ]
    for a, row in zip(model.alphas, model.sv_points):
        lines.append(" ".join([_g(a)] + [f"{j + 1}:{_g(v)}" for j, v in enumerate(row) if v != 0.0]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> SvmModel:
    text = Path(path).read_text().splitlines()
    try:
        split = text.index("SV")
    except ValueError:
        raise DataError(f"{path}: missing SV section") from None
    header = {}
    for line in text[:split]:
        key, _, val = line.partition(" ")
        header[key] = val
    try:
        n = int(header["n_features"])
        params = SvmParams(float(header["c_pos"]), float(header["c_neg"]),
                           KernelParams(float(header["gamma"])),
                           tolerance=float(header.get("tolerance", 1e-3)),
                           max_iterations=int(header.get("max_iterations", 10_000_000)))
        bias = float(header["bias"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad model header ({exc})") from None
    alphas, points = [], []
    for line in text[split + 1:]:
        if not line.strip():
            continue
        tok = line.split()
        alphas.append(float(tok[0]))
        row = np.zeros(n)
        for item in tok[1:]:
            j, _, v = item.partition(":")
            row[int(j) - 1] = float(v)
        points.append(row)
    idx = header.get("sv_indices", "").split()
    sv = np.array([int(i) for i in idx], dtype=np.int64) if idx else np.arange(len(alphas))
    return SvmModel(sv_indices=sv, alphas=np.array(alphas), bias=bias, params=params,
                    sv_points=np.array(points).reshape(len(alphas), n))
