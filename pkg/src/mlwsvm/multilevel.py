"""Multilevel (W)SVM: per-class coarsening, coarsest-level training, refinement.

Each class is coarsened independently on its own kNN graph. A coarse level
keeps a maximal independent set of the graph, extended in degree order until
it covers at least ``ratio_floor`` of the class; every dropped point is
represented by its nearest kept neighbor. A class at or below
``minority_floor`` points is frozen and copied verbatim to coarser levels.

The coarsest level is trained with the nested UD search. Going back up, each
level is retrained on the children of the coarse support vectors plus their
nearest same-class neighbors. The retrained model replaces the projected one
only if its G-mean over the whole level is at least as high.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model_select as ms
from .errors import ConfigError, DataError
from .kernel_solver import SvmModel, SvmParams, smo_train
from .knn_graph import AUTO, AknnGraph, build_aknn, symmetrized
from .metrics import gmean_score


@dataclass(frozen=True)
class MlConfig:
    """Hierarchy, refinement and search settings.

    Attributes
    ----------
    k : int
        Neighbors per point in the per-class kNN graphs.
    ratio_floor : float
        Minimum fraction of a class kept by one coarsening step.
    coarsest_size_target : int
        Coarsening stops once a level has at most twice this many points.
    minority_floor : int
        Classes of at most this size are not coarsened further.
    refine_neighbors : int
        Same-class neighbors added around each projected support vector.
    partition_cap, search_cap : int
        Largest refinement set, and largest one that gets a parameter re-search.
    """

    k: int = 10
    ratio_floor: float = 0.5
    coarsest_size_target: int = 500
    minority_floor: int = 300
    refine_neighbors: int = 5
    partition_cap: int = 10_000
    search_cap: int = 5_000
    knn_mode: str = AUTO
    inner_folds: int = 5
    bounds: tuple = ms.DEFAULT_BOUNDS
    tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    max_levels: int = 64

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be positive")
        if not 0.5 <= self.ratio_floor <= 1.0:
            raise ConfigError("ratio_floor must lie in [0.5, 1]")
        for name in ("coarsest_size_target", "minority_floor", "partition_cap", "search_cap", "max_levels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.refine_neighbors < 0:
            raise ConfigError("refine_neighbors must be non-negative")
        if self.inner_folds < 2:
            raise ConfigError("inner_folds must be at least 2")
        ms._check_bounds(self.bounds)

    @property
    def svm_kw(self) -> dict:
        return {"tolerance": self.tolerance, "max_iterations": self.max_iterations}


@dataclass(frozen=True, eq=False)
class Level:
    """One level of the hierarchy, in original row ids.

    ``parent_pos[i]`` is the representative of ``pos_rows[i]`` at the next
    coarser level (itself at the coarsest); likewise for negatives.
    """

    pos_rows: np.ndarray
    neg_rows: np.ndarray
    graph_pos: AknnGraph | None
    graph_neg: AknnGraph | None
    parent_pos: np.ndarray
    parent_neg: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        """All row ids, ascending."""
        return np.sort(np.concatenate([self.pos_rows, self.neg_rows]))

    @property
    def parents(self) -> np.ndarray:
        """Representatives aligned with :attr:`rows`."""
        r = np.concatenate([self.pos_rows, self.neg_rows])
        return np.concatenate([self.parent_pos, self.parent_neg])[np.argsort(r)]

    @property
    def size(self) -> int:
        return len(self.pos_rows) + len(self.neg_rows)

    @property
    def parent_map(self) -> dict:
        return {int(r): int(p) for r, p in zip(self.rows, self.parents)}


@dataclass(frozen=True, eq=False)
class Hierarchy:
    levels: list
    ratio_floor: float
    coarsest_size_target: int
    minority_floor: int

    @property
    def coarsest(self) -> Level:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def class_sizes(self) -> list:
        return [(len(lv.pos_rows), len(lv.neg_rows)) for lv in self.levels]


@dataclass(frozen=True, eq=False)
class MlTrainResult:
    """Final model plus per-level telemetry.

    ``per_level`` rows are ``(level, n_points, n_sv, seconds)`` from the
    coarsest level to the finest; ``params_used`` follows the same order.
    ``fallbacks`` lists ``(level, reason)`` for levels that kept the incoming
    coarse model.
    """

    final_model: SvmModel
    per_level: list
    params_used: list
    hierarchy: Hierarchy
    coarsening_seconds: float = 0.0
    fallbacks: list = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return self.coarsening_seconds + sum(r[3] for r in self.per_level)


def _sub_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


def coarsen_class(graph: AknnGraph, ratio_floor: float = 0.5, seed: int = 0, points=None) -> tuple:
    """Select the coarse points of one class.

    Returns
    -------
    coarse_ids : ndarray
        Original ids of the kept points, ascending.
    parents : ndarray
        Representative id of every node, aligned with ``graph.node_ids``.
    """
    n = graph.n_nodes
    if n == 0:
        raise DataError("cannot coarsen an empty graph")
    ids = graph.node_ids
    adj = symmetrized(graph)
    ptr, nbr, dist = adj.indptr, adj.indices, adj.data
    selected = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    for u in np.random.default_rng(seed).permutation(n):
        if not blocked[u]:
            selected[u] = True
            blocked[nbr[ptr[u]:ptr[u + 1]]] = True
    need = math.ceil(ratio_floor * n) - int(selected.sum())
    if need > 0:
        rest = np.flatnonzero(~selected)
        deg = np.diff(ptr)[rest]
        selected[rest[np.lexsort((ids[rest], -deg))[:need]]] = True
    parents = ids.copy()
    chosen = np.flatnonzero(selected)
    for u in np.flatnonzero(~selected):
        cand = nbr[ptr[u]:ptr[u + 1]]
        d = dist[ptr[u]:ptr[u + 1]]
        keep = selected[cand]
        if keep.any():
            cand, d = cand[keep], d[keep]
        elif points is not None:
            # no kept neighbor in the graph: nearest kept point overall
            p = np.asarray(points, dtype=np.float64)
            cand = chosen
            d = np.sqrt(((p[chosen] - p[u]) ** 2).sum(axis=1))
        else:
            raise DataError(f"node {ids[u]} has no selected neighbor and no points were given")
        best = np.lexsort((ids[cand], d))[0]
        parents[u] = ids[cand[best]]
    return np.sort(ids[selected]), parents


def _graph(x, rows, config: MlConfig, seed: int) -> AknnGraph | None:
    if len(rows) < 2:
        return None
    return build_aknn(x[rows], k=min(config.k, len(rows) - 1), mode=config.knn_mode,
                      seed=seed, node_ids=rows)


def _split(y) -> tuple:
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise DataError("labels must be -1 or +1")
    pos, neg = np.flatnonzero(y > 0), np.flatnonzero(y < 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("both classes must be present")
    return pos, neg


def build_hierarchy(x, y, config: MlConfig = MlConfig(), seed: int = 0) -> Hierarchy:
    """Coarsen each class independently until the level is small enough."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise DataError("coarsening needs complete points")
    rows = list(_split(y))
    graphs = [_graph(x, rows[c], config, _sub_seed(seed, 0, c)) for c in range(2)]
    levels = []
    for depth in range(config.max_levels):
        total = len(rows[0]) + len(rows[1])
        nxt, parents, shrank = [], [], False
        if total > 2 * config.coarsest_size_target and depth < config.max_levels - 1:
            for c in range(2):
                if len(rows[c]) <= config.minority_floor:
                    nxt.append(rows[c])
                    parents.append(rows[c].copy())
                    continue
                coarse, par = coarsen_class(graphs[c], config.ratio_floor,
                                            _sub_seed(seed, depth, c), x[rows[c]])
                shrank |= len(coarse) < len(rows[c])
                nxt.append(coarse)
                parents.append(par)
        if not shrank:
            levels.append(Level(rows[0], rows[1], graphs[0], graphs[1], rows[0].copy(), rows[1].copy()))
            break
        levels.append(Level(rows[0], rows[1], graphs[0], graphs[1], parents[0], parents[1]))
        # a frozen class keeps its graph
        graphs = [graphs[c] if len(nxt[c]) == len(rows[c])
                  else _graph(x, nxt[c], config, _sub_seed(seed, depth + 1, c)) for c in range(2)]
        rows = nxt
    return Hierarchy(levels, config.ratio_floor, config.coarsest_size_target, config.minority_floor)


def _default_search(x, y, weighted, config: MlConfig, seed: int) -> ms.SearchResult:
    return ms.nested_ud_search(x, y, weighted, folds=config.inner_folds, seed=seed,
                               bounds=config.bounds, **config.svm_kw)


def _fit_coarsest(hierarchy, x, y, weighted, config, seed, search=None, params=None) -> tuple:
    rows = hierarchy.coarsest.rows
    xc, yc = x[rows], np.asarray(y)[rows]
    point = None
    if params is None:
        result = (search or _default_search)(xc, yc, weighted, config, seed)
        params, point = result.best_params, result.best_point
    model = smo_train(xc, yc, params)
    return model.with_indices(rows[model.sv_indices]), params, point


def train_coarsest(hierarchy: Hierarchy, x, y, weighted: bool = True, config: MlConfig = MlConfig(),
                   seed: int = 0, search=None, params: SvmParams | None = None) -> tuple:
    """Train on the coarsest level; returns ``(model, params)``.

    ``search(x, y, weighted, config, seed)`` must return a SearchResult; it
    defaults to the nested UD search. Passing ``params`` skips the search.
    The model's support-vector indices are original row ids.
    """
    model, params, _ = _fit_coarsest(hierarchy, x, y, weighted, config, seed, search, params)
    return model, params


def refinement_set(hierarchy: Hierarchy, level_index: int, coarse_model: SvmModel,
                   r: int, x=None, cap: int | None = None) -> np.ndarray:
    """Rows of the refinement training set at ``level_index``, ascending.

    Children of the coarse support vectors plus their ``r`` nearest
    same-class neighbors; trimmed to the ``cap`` rows with the smallest
    coarse decision magnitude when ``cap`` is given.
    """
    level = hierarchy.levels[level_index]
    sv = coarse_model.sv_indices
    parts = []
    for rows, parents, graph in ((level.pos_rows, level.parent_pos, level.graph_pos),
                                 (level.neg_rows, level.parent_neg, level.graph_neg)):
        hit = np.flatnonzero(np.isin(parents, sv))
        parts.append(rows[hit])
        if r > 0 and graph is not None and len(hit):
            local = graph.neighbors[hit, : min(r, graph.k)]
            parts.append(graph.node_ids[local.ravel()])
    t = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    if cap is not None and len(t) > cap:
        margin = np.abs(coarse_model.decision_function(np.asarray(x)[t]))
        t = np.sort(t[np.argsort(margin, kind="stable")[:cap]])
    return t


SINGLE_CLASS = "single-class"
NO_IMPROVEMENT = "no-improvement"


def _level_gmean(model: SvmModel, x, y, rows) -> float:
    return gmean_score(model.predict(x[rows]), y[rows])


def _refine(hierarchy, level_index, coarse_model, coarse_params, x, y, config, weighted,
            seed, point=None, widths=None) -> tuple:
    """Returns ``(model, params, point, widths, |T|, reason)``; ``reason`` is
    empty when the retrained model was kept."""
    y = np.asarray(y)
    t = refinement_set(hierarchy, level_index, coarse_model, config.refine_neighbors, x,
                       config.partition_cap)
    yt = y[t]
    if not ((yt > 0).any() and (yt < 0).any()):
        warnings.warn(f"refinement set at level {level_index} holds a single class; "
                      "keeping the coarse model", RuntimeWarning, stacklevel=3)
        return coarse_model, coarse_params, point, widths, len(t), SINGLE_CLASS
    xt = x[t]
    params, new_point, new_widths = coarse_params, point, widths
    if point is not None:
        params = ms.make_params(point, yt, weighted, **config.svm_kw)
        if len(t) <= config.search_cap and widths is not None:
            box = ((point[0] - widths[0] / 2, point[0] + widths[0] / 2),
                   (point[1] - widths[1] / 2, point[1] + widths[1] / 2))
            design = ms.ud_points(ms.SECOND, box, point)
            (cl, ch), (gl, gh) = config.bounds
            pts = tuple((min(max(c, cl), ch), min(max(g, gl), gh)) for c, g in design.points)
            design = ms.UdDesign(ms.SECOND, pts, design.bounds)
            scored = ms.evaluate_design(xt, yt, design, weighted, config.inner_folds, seed,
                                        **config.svm_kw)
            new_point, _ = ms._best(scored)
            params = ms.make_params(new_point, yt, weighted, **config.svm_kw)
            new_widths = (widths[0] / 2, widths[1] / 2)
    model = smo_train(xt, yt, params)
    model = model.with_indices(t[model.sv_indices])
    # T only covers the boundary band; the retrained model has to hold up on
    # the whole level, otherwise the projected coarse model is kept
    rows = hierarchy.levels[level_index].rows
    if _level_gmean(model, x, y, rows) < _level_gmean(coarse_model, x, y, rows):
        return coarse_model, coarse_params, point, new_widths, len(t), NO_IMPROVEMENT
    return model, params, new_point, new_widths, len(t), ""


def refine_level(hierarchy: Hierarchy, level_index: int, coarse_model: SvmModel,
                 coarse_params: SvmParams, x, y, config: MlConfig = MlConfig(),
                 weighted: bool = True, seed: int = 0, center=None, widths=None) -> tuple:
    """Retrain level ``level_index`` around the projected coarse support vectors.

    ``coarse_model`` must index original rows. With ``center`` (log2 C,
    log2 gamma) and ``widths`` a 5-run design on half of ``widths`` re-tunes
    the parameters; otherwise ``coarse_params`` are reused. Returns
    ``(model, params)``.
    """
    model, params, *_ = _refine(hierarchy, level_index, coarse_model, coarse_params, x, y,
                                config, weighted, seed, center, widths)
    return model, params


def ml_train(x, y, config: MlConfig = MlConfig(), weighted: bool = True, seed: int = 0,
             search=None) -> MlTrainResult:
    """Multilevel training: coarsen, train the coarsest level, refine to the finest.

    ``weighted=False`` gives MLSVM (one penalty), ``True`` MLWSVM
    (penalties inversely proportional to class size).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y)
    t0 = time.perf_counter()
    hierarchy = build_hierarchy(x, y, config, seed)
    coarsening = time.perf_counter() - t0

    top = hierarchy.n_levels - 1
    t0 = time.perf_counter()
    model, params, point = _fit_coarsest(hierarchy, x, y, weighted, config, seed, search)
    per_level = [(top, hierarchy.coarsest.size, model.n_sv, time.perf_counter() - t0)]
    params_used = [params]
    (cl, ch), (gl, gh) = config.bounds
    # width of the nested search's second stage
    widths = ((ch - cl) / 2, (gh - gl) / 2)
    fallbacks = []
    for i in range(top - 1, -1, -1):
        t0 = time.perf_counter()
        model, params, point, widths, n_t, reason = _refine(
            hierarchy, i, model, params, x, y, config, weighted, _sub_seed(seed, 7, i), point, widths)
        per_level.append((i, n_t, model.n_sv, time.perf_counter() - t0))
        params_used.append(params)
        if reason:
            fallbacks.append((i, reason))
    return MlTrainResult(model, per_level, params_used, hierarchy, coarsening, fallbacks)


def direct_train(x, y, weighted: bool = True, config: MlConfig = MlConfig(), seed: int = 0,
                 search=None) -> tuple:
    """UD-searched (W)SVM on all rows; returns ``(model, params, seconds)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y)
    t0 = time.perf_counter()
    result = (search or _default_search)(x, y, weighted, config, seed)
    model = smo_train(x, y, result.best_params)
    return model, result.best_params, time.perf_counter() - t0


def write_telemetry(result: MlTrainResult, path) -> None:
    """Per-level CSV: level, n_points, n_sv, seconds."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "n_points", "n_sv", "seconds"])
        for level, n_points, n_sv, secs in result.per_level:
            w.writerow([level, n_points, n_sv, format(secs, ".3f")])
