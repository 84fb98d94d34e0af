"""Approximate k-nearest-neighbor graphs.

The approximate builder seeds candidate lists from a forest of random
projection trees and improves them with neighbor-of-neighbor sweeps. Exact
mode is a brute-force scan. Neighbor lists are ordered by (distance, id).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import DataError

EXACT = "exact"
APPROXIMATE = "approximate"
AUTO = "auto"
EXACT_LIMIT = 1000


@dataclass(frozen=True, eq=False)
class AknnGraph:
    """Directed kNN graph in local indexing.

    ``neighbors[u]`` lists local indices of the neighbors of node ``u`` in
    ascending distance; ``node_ids[u]`` is its original row id.
    """

    k: int
    neighbors: np.ndarray
    distances: np.ndarray
    node_ids: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def adjacency(self, node_id) -> list:
        """``(neighbor id, distance)`` pairs of one node, in original ids."""
        u = self.local_index(node_id)
        return [(int(self.node_ids[v]), float(d)) for v, d in zip(self.neighbors[u], self.distances[u])]

    def local_index(self, node_id) -> int:
        hits = np.flatnonzero(self.node_ids == node_id)
        if len(hits) == 0:
            raise KeyError(f"node {node_id} not in graph")
        return int(hits[0])


@njit(cache=True)
def _dist(x, a, b):
    s = 0.0
    for k in range(x.shape[1]):
        d = x[a, k] - x[b, k]
        s += d * d
    return np.sqrt(s)


@njit(cache=True)
def _push(nbr, dst, u, v, d):
    """Insert v into u's sorted list if it improves it. Returns True on change."""
    k = nbr.shape[1]
    last = k - 1
    if nbr[u, last] >= 0 and (d > dst[u, last] or (d == dst[u, last] and v > nbr[u, last])):
        return False
    for t in range(k):
        if nbr[u, t] == v:
            return False
    pos = last
    while pos > 0:
        p = pos - 1
        if nbr[u, p] < 0 or d < dst[u, p] or (d == dst[u, p] and v < nbr[u, p]):
            nbr[u, pos] = nbr[u, p]
            dst[u, pos] = dst[u, p]
            pos -= 1
        else:
            break
    nbr[u, pos] = v
    dst[u, pos] = d
    return True


@njit(cache=True)
def _exact_knn(x, k):
    n = x.shape[0]
    nbr = -np.ones((n, k), dtype=np.int64)
    dst = np.full((n, k), np.inf)
    row = np.empty(n)
    for u in range(n):
        for v in range(n):
            row[v] = _dist(x, u, v) if v != u else np.inf
        order = np.argsort(row, kind="mergesort")
        for t in range(k):
            nbr[u, t] = order[t]
            dst[u, t] = row[order[t]]
    return nbr, dst


@njit(cache=True)
def _leaf_join(x, leaves, starts, nbr, dst):
    for b in range(len(starts) - 1):
        s, e = starts[b], starts[b + 1]
        for p in range(s, e):
            u = leaves[p]
            for q in range(p + 1, e):
                v = leaves[q]
                d = _dist(x, u, v)
                _push(nbr, dst, u, v, d)
                _push(nbr, dst, v, u, d)


@njit(cache=True)
def _refine(x, nbr, dst):
    """One neighbor-of-neighbor sweep over forward and reverse lists."""
    n, k = nbr.shape
    old = nbr.copy()
    rcap = 2 * k
    rev = -np.ones((n, rcap), dtype=np.int64)
    rcount = np.zeros(n, dtype=np.int64)
    for u in range(n):
        for t in range(k):
            v = old[u, t]
            if v >= 0 and rcount[v] < rcap:
                rev[v, rcount[v]] = u
                rcount[v] += 1
    changes = 0
    for u in range(n):
        for a in range(k + rcap):
            v = old[u, a] if a < k else rev[u, a - k]
            if v < 0:
                continue
            for b in range(k + rcap):
                w = old[v, b] if b < k else rev[v, b - k]
                if w < 0 or w == u:
                    continue
                if _push(nbr, dst, u, w, _dist(x, u, w)):
                    changes += 1
    return changes


def _rp_leaves(x: np.ndarray, leaf_size: int, rng: np.random.Generator) -> list:
    leaves = []
    stack = [np.arange(x.shape[0])]
    while stack:
        idx = stack.pop()
        if len(idx) <= leaf_size:
            leaves.append(idx)
            continue
        a, b = rng.choice(len(idx), size=2, replace=False)
        normal = x[idx[a]] - x[idx[b]]
        mid = 0.5 * (x[idx[a]] + x[idx[b]])
        side = (x[idx] - mid) @ normal > 0
        if side.all() or not side.any():
            perm = rng.permutation(len(idx))
            side = np.zeros(len(idx), dtype=bool)
            side[perm[: len(idx) // 2]] = True
        stack.append(idx[~side])
        stack.append(idx[side])
    return leaves


def build_aknn(points, k: int = 10, mode: str = AUTO, seed: int = 0, node_ids=None,
               n_trees: int = 8, leaf_size: int = 32, n_sweeps: int = 2) -> AknnGraph:
    """Build a (approximate) kNN graph over the rows of ``points``.

    Parameters
    ----------
    points : array_like, shape (l, n)
    k : int
        Neighbors per node; must be smaller than ``l``.
    mode : {"auto", "exact", "approximate"}
        ``auto`` is exact for ``l <= 1000`` and approximate above.
    seed : int
    node_ids : array_like, optional
        Original row ids of the points (default ``0..l-1``).
    """
    x = np.ascontiguousarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("points must be a 2-D array")
    if np.isnan(x).any():
        raise DataError("kNN graph construction needs complete points")
    n = x.shape[0]
    if n < 2:
        raise DataError("need at least two points")
    if k < 1 or k >= n:
        raise DataError(f"k must lie in [1, {n - 1}], got {k}")
    ids = np.arange(n) if node_ids is None else np.asarray(node_ids, dtype=np.int64)
    if ids.shape != (n,):
        raise DataError("node_ids must have one entry per point")
    if mode == AUTO:
        mode = EXACT if n <= EXACT_LIMIT else APPROXIMATE
    if mode == EXACT or k == n - 1:
        nbr, dst = _exact_knn(x, k)
    elif mode == APPROXIMATE:
        rng = np.random.default_rng(seed)
        nbr = -np.ones((n, k), dtype=np.int64)
        dst = np.full((n, k), np.inf)
        for _ in range(n_trees):
            leaves = _rp_leaves(x, max(leaf_size, k + 1), rng)
            starts = np.cumsum([0] + [len(lf) for lf in leaves])
            _leaf_join(x, np.concatenate(leaves), starts, nbr, dst)
        for _ in range(n_sweeps):
            if _refine(x, nbr, dst) == 0:
                break
        if (nbr < 0).any():
            # a node isolated by every tree: fall back to a scan for it
            for u in np.flatnonzero((nbr < 0).any(axis=1)):
                d = np.sqrt(((x - x[u]) ** 2).sum(1))
                d[u] = np.inf
                order = np.lexsort((np.arange(n), d))[:k]
                nbr[u], dst[u] = order, d[order]
    else:
        raise DataError(f"unknown mode {mode!r}")
    return AknnGraph(k=k, neighbors=nbr, distances=dst, node_ids=ids)


def symmetrized(graph: AknnGraph) -> sp.csr_matrix:
    """Undirected adjacency (local indices) with edge distances as data."""
    n, k = graph.neighbors.shape
    rows = np.repeat(np.arange(n), k)
    cols = graph.neighbors.ravel()
    # offset by 1 so zero-distance edges (duplicate points) survive as entries
    data = graph.distances.ravel() + 1.0
    a = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    a = a.maximum(a.T).tocsr()
    a.data -= 1.0
    return a


def symmetrized_degrees(graph: AknnGraph) -> np.ndarray:
    return np.diff(symmetrized(graph).indptr)


def degree_in_symmetrized(graph: AknnGraph, node) -> int:
    """Number of distinct undirected neighbors of original id ``node``."""
    return int(symmetrized_degrees(graph)[graph.local_index(node)])


def recall(approx: AknnGraph, exact: AknnGraph) -> float:
    """Fraction of exact neighbors recovered by ``approx``."""
    hits = 0
    for a, e in zip(approx.neighbors, exact.neighbors):
        hits += len(np.intersect1d(a, e))
    return hits / exact.neighbors.size
