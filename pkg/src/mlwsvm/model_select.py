"""Nested uniform-design search over (log2 C, log2 gamma) maximizing CV G-mean.

The first stage is a 9-run good-lattice design (generator 4 mod 9) over the
whole domain; the second stage is a 5-run design on a box of half the width
re-centered on the first-stage winner.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import stratified_kfold
from .errors import ConfigError, DataError, MlwsvmError
from .kernel_solver import KernelParams, SvmModel, SvmParams, class_weights_from_counts, smo_train
from .metrics import accumulate, measures

FIRST = "first"
SECOND = "second"
DEFAULT_BOUNDS = ((-5.0, 15.0), (-15.0, 3.0))

Trainer = Callable[[np.ndarray, np.ndarray, SvmParams], SvmModel]


@dataclass(frozen=True)
class UdDesign:
    stage: str
    points: tuple
    bounds: tuple


@dataclass(frozen=True, eq=False)
class SearchResult:
    """Outcome of a UD search.

    ``evaluations`` lists ``(params, gmean)`` for every candidate tried, in
    evaluation order; ``points`` holds the matching (log2 C, log2 gamma) pairs.
    """

    best_params: SvmParams
    best_gmean: float
    best_point: tuple
    evaluations: list
    points: list
    stages: list = field(default_factory=list)
    final_bounds: tuple = DEFAULT_BOUNDS


def _check_bounds(bounds) -> tuple:
    try:
        (cl, ch), (gl, gh) = bounds
    except (TypeError, ValueError):
        raise ConfigError(f"bounds must be ((c_lo, c_hi), (g_lo, g_hi)), got {bounds!r}") from None
    if not (ch > cl and gh > gl):
        raise ConfigError(f"degenerate search bounds {bounds!r}")
    return (float(cl), float(ch)), (float(gl), float(gh))


def ud_points(stage: str, bounds=DEFAULT_BOUNDS, center=None) -> UdDesign:
    """Design points of one stage.

    ``first``: 9 runs, run i at fractions ((i - 0.5)/9, ((4(i - 1) mod 9) + 0.5)/9)
    of the two ranges. ``second``: the box of half the width of ``bounds``
    centered on ``center`` (clipped to ``bounds``); runs at the center and at
    +-1/4 of the halved widths along both diagonals.
    """
    (cl, ch), (gl, gh) = _check_bounds(bounds)
    if stage == FIRST:
        pts = tuple((cl + (ch - cl) * (i - 0.5) / 9, gl + (gh - gl) * (((i - 1) * 4) % 9 + 0.5) / 9)
                    for i in range(1, 10))
        return UdDesign(FIRST, pts, ((cl, ch), (gl, gh)))
    if stage != SECOND:
        raise ConfigError(f"unknown stage {stage!r}")
    if center is None:
        raise ConfigError("the second stage needs a center")
    cx = min(max(float(center[0]), cl), ch)
    gx = min(max(float(center[1]), gl), gh)
    wc, wg = (ch - cl) / 2, (gh - gl) / 2
    nb = ((max(cl, cx - wc / 2), min(ch, cx + wc / 2)), (max(gl, gx - wg / 2), min(gh, gx + wg / 2)))
    pts = [(cx, gx)]
    for sc, sg in ((-1, -1), (1, 1), (-1, 1), (1, -1)):
        pts.append((min(max(cx + sc * wc / 4, nb[0][0]), nb[0][1]),
                    min(max(gx + sg * wg / 4, nb[1][0]), nb[1][1])))
    return UdDesign(SECOND, tuple(pts), nb)


def make_params(point, y, weighted: bool, **svm_kw) -> SvmParams:
    """SvmParams for a (log2 C, log2 gamma) point; weighted penalties follow the class counts of ``y``."""
    c = 2.0 ** point[0]
    gamma = 2.0 ** point[1]
    if weighted:
        y = np.asarray(y)
        c_pos, c_neg = class_weights_from_counts(int((y > 0).sum()), int((y < 0).sum()), c)
    else:
        c_pos = c_neg = c
    return SvmParams(c_pos, c_neg, KernelParams(gamma), **svm_kw)


def cv_gmean(x, y, point, weighted: bool, folds: int = 5, seed: int = 0,
             trainer: Trainer = smo_train, **svm_kw) -> float:
    """Pooled k-fold G-mean of one candidate.

    Folds are capped by the smallest class size; with fewer than two points
    in a class the candidate is scored on its training data.
    """
    y = np.asarray(y)
    smallest = min(int((y > 0).sum()), int((y < 0).sum()))
    k = min(folds, smallest)
    preds = np.empty(len(y), dtype=np.int64)
    if k < 2:
        model = trainer(x, y, make_params(point, y, weighted, **svm_kw))
        preds[:] = model.predict(x)
    else:
        for tr, te in stratified_kfold(y, k, seed):
            model = trainer(x[tr], y[tr], make_params(point, y[tr], weighted, **svm_kw))
            preds[te] = model.predict(x[te])
    return measures(accumulate(preds, y)).gmean


def evaluate_design(x, y, design: UdDesign, weighted: bool, folds: int, seed: int,
                    trainer: Trainer = smo_train, skip=(), **svm_kw) -> list:
    """``(point, gmean)`` for each design point not in ``skip``; failed candidates score NaN."""
    out = []
    for p in design.points:
        if p in skip or any(p == q for q, _ in out):
            continue
        try:
            g = cv_gmean(x, y, p, weighted, folds, seed, trainer, **svm_kw)
        except MlwsvmError:
            g = math.nan
        out.append((p, g))
    return out


def _best(scored: list) -> tuple:
    ok = [(p, g) for p, g in scored if not math.isnan(g)]
    if not ok:
        raise DataError("every search candidate failed")
    # ties prefer the smaller C, then the smaller gamma
    return min(ok, key=lambda pg: (-pg[1], pg[0][0], pg[0][1]))


def _result(x, y, scored, weighted, stages, bounds, **svm_kw) -> SearchResult:
    point, g = _best(scored)
    evaluations = [(make_params(p, y, weighted, **svm_kw), s) for p, s in scored]
    return SearchResult(best_params=make_params(point, y, weighted, **svm_kw), best_gmean=g,
                        best_point=point, evaluations=evaluations, points=[p for p, _ in scored],
                        stages=stages, final_bounds=bounds)


def nested_ud_search(x, y, weighted: bool, folds: int = 5, trainer: Trainer = smo_train,
                     seed: int = 0, bounds=DEFAULT_BOUNDS, **svm_kw) -> SearchResult:
    """Two-stage (9 + 5 runs) uniform-design search maximizing CV G-mean.

    For the weighted SVM only the base penalty is searched; the class
    penalties follow from the class counts.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if not ((y > 0).any() and (y < 0).any()):
        raise DataError("search data must contain both classes")
    if folds < 2:
        raise ConfigError("folds must be at least 2")
    first = ud_points(FIRST, bounds)
    scored = evaluate_design(x, y, first, weighted, folds, seed, trainer, **svm_kw)
    winner, _ = _best(scored)
    second = ud_points(SECOND, first.bounds, winner)
    scored += evaluate_design(x, y, second, weighted, folds, seed, trainer,
                              skip=[p for p, _ in scored], **svm_kw)
    stages = [FIRST] * len(first.points)
    stages += [SECOND] * (len(scored) - len(stages))
    return _result(x, y, scored, weighted, stages, second.bounds, **svm_kw)


def local_ud_search(x, y, weighted: bool, center, bounds, folds: int = 5,
                    trainer: Trainer = smo_train, seed: int = 0, **svm_kw) -> SearchResult:
    """One 5-run stage on the half-width box of ``bounds`` centered at ``center``."""
    design = ud_points(SECOND, bounds, center)
    scored = evaluate_design(x, np.asarray(y), design, weighted, folds, seed, trainer, **svm_kw)
    return _result(x, np.asarray(y), scored, weighted, [SECOND] * len(scored), design.bounds, **svm_kw)


def write_trace(result: SearchResult, path) -> None:
    """Search trace CSV: stage, log2_c, log2_gamma, gmean."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "log2_c", "log2_gamma", "gmean"])
        for stage, p, (_, g) in zip(result.stages, result.points, result.evaluations):
            w.writerow([stage, format(p[0], ".6g"), format(p[1], ".6g"), format(g, ".6g")])
