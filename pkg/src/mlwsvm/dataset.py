"""Data model, file ingestion, normalization, MCAR injection and fold splitting.

Missing values are stored as NaN in ``Dataset.features`` and mirrored by the
boolean ``Dataset.missing`` mask. Datasets are immutable: every operation here
returns a new object.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

DENSE_CSV = "dense-csv"
SPARSE = "sparse"
FORMATS = (DENSE_CSV, SPARSE)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with a missing-cell mask and integer labels.

    Attributes
    ----------
    features : ndarray, shape (l, n)
        Real values, NaN where ``missing`` is true.
    missing : ndarray of bool, shape (l, n)
    labels : ndarray of int, shape (l,)
    name : str
    feature_names : tuple of str
    """

    features: np.ndarray
    missing: np.ndarray
    labels: np.ndarray
    name: str = ""
    feature_names: tuple = field(default=())

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        m = np.asarray(self.missing, dtype=bool)
        y = np.asarray(self.labels)
        if y.dtype.kind == "f":
            if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if m.shape != x.shape:
            raise DataError(f"missing mask shape {m.shape} != features shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError(f"expected {x.shape[0]} labels, got {y.shape}")
        nan = np.isnan(x)
        if np.any(nan != m):
            raise DataError("NaN cells must coincide with the missing mask")
        if np.any(np.isinf(x)):
            raise DataError("features contain infinite values")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} feature names for {x.shape[1]} columns")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "missing", _frozen(m))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_arrays(cls, features, labels, name: str = "", feature_names=()) -> "Dataset":
        """Build a dataset whose missing mask is taken from the NaN cells."""
        x = np.asarray(features, dtype=np.float64)
        return cls(x, np.isnan(x), labels, name, tuple(feature_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def class_ids(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def class_counts(self) -> dict:
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.missing[rows], self.labels[rows],
                       self.name, self.feature_names)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset.from_arrays(features, self.labels, self.name, self.feature_names)

    def binarize(self, positive=None) -> "Dataset":
        """Relabel to {-1, +1}.

        ``positive`` selects the class mapped to +1; by default it is the
        smallest class (ties go to the larger label id). Datasets already
        labelled {-1, +1} are returned unchanged when ``positive`` is None.
        """
        ids = self.class_ids
        if positive is None:
            if set(ids.tolist()) <= {-1, 1} and len(ids) == 2:
                return self
            counts = self.class_counts()
            positive = min(ids.tolist(), key=lambda c: (counts[c], -c))
        if positive not in ids:
            raise DataError(f"class {positive!r} not present")
        y = np.where(self.labels == positive, 1, -1)
        return Dataset(self.features, self.missing, y, self.name, self.feature_names)


@dataclass(frozen=True)
class FoldSplit:
    """Fold index per row, in ``[0, k)``."""

    fold_assignments: np.ndarray
    k: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments != fold)

    def __iter__(self):
        for f in range(self.k):
            yield self.train_rows(f), self.test_rows(f)


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    stdev: np.ndarray


# --------------------------------------------------------------------------
# file I/O


def _parse_float(text: str, lineno: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric value {text!r} in column {column!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite value {text!r} in column {column!r}")
    return v


def _parse_label(text: str, lineno: int) -> int:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric label {text!r}") from None
    if not math.isfinite(v) or v != int(v):
        raise DataError(f"line {lineno}: label {text!r} is not an integer")
    return int(v)


def _load_dense(path: Path, label_column: str) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataError(f"{path}: no label column {label_column!r} in header")
    li = header.index(label_column)
    names = [h for j, h in enumerate(header) if j != li]
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        label_text = row[li].strip()
        if not label_text:
            raise DataError(f"line {lineno}: missing label")
        labels.append(_parse_label(label_text, lineno))
        vals = []
        for j, cell in enumerate(row):
            if j == li:
                continue
            cell = cell.strip()
            vals.append(math.nan if cell == "" else _parse_float(cell, lineno, header[j]))
        feats.append(vals)
    if not labels:
        raise DataError(f"{path}: no data rows")
    x = np.array(feats, dtype=np.float64).reshape(len(labels), len(names))
    return x, np.array(labels), names


def _load_sparse(path: Path, n_features: int | None) -> tuple:
    entries, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            labels.append(_parse_label(tokens[0], lineno))
            row = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise DataError(f"line {lineno}: malformed entry {tok!r}")
                try:
                    j = int(idx)
                except ValueError:
                    raise DataError(f"line {lineno}: bad feature index {idx!r}") from None
                if j < 1:
                    raise DataError(f"line {lineno}: feature indices are 1-based, got {j}")
                if j in row:
                    raise DataError(f"line {lineno}: duplicate feature index {j}")
                row[j] = _parse_float(val, lineno, str(j))
            entries.append(row)
    if not labels:
        raise DataError(f"{path}: empty file")
    n = max((max(r) for r in entries if r), default=0)
    if n_features is not None:
        if n_features < n:
            raise DataError(f"{path}: feature index {n} exceeds n_features={n_features}")
        n = n_features
    x = np.zeros((len(labels), n))
    for i, row in enumerate(entries):
        for j, v in row.items():
            x[i, j - 1] = v
    return x, np.array(labels), [f"x{j + 1}" for j in range(n)]


def load_dataset(path, format: str = DENSE_CSV, label_column: str = "label",
                 name: str | None = None, n_features: int | None = None) -> Dataset:
    """Read a dataset from a dense CSV or a sparse ``label idx:val`` file.

    In dense CSV files an empty field marks a missing value. In sparse files
    absent entries are zeros, never missing.
    """
    path = Path(path)
    if format == DENSE_CSV:
        x, y, names = _load_dense(path, label_column)
    elif format == SPARSE:
        x, y, names = _load_sparse(path, n_features)
    else:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    return Dataset.from_arrays(x, y, name or path.stem, names)


def save_dataset(data: Dataset, path, format: str = DENSE_CSV, label_column: str = "label") -> None:
    """Write ``data`` so that :func:`load_dataset` reproduces it exactly."""
    path = Path(path)
    if format == DENSE_CSV:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(data.feature_names) + [label_column])
            for row, miss, lab in zip(data.features, data.missing, data.labels):
                w.writerow(["" if m else repr(float(v)) for v, m in zip(row, miss)] + [int(lab)])
    elif format == SPARSE:
        if data.n_missing:
            raise DataError("the sparse format cannot represent missing cells")
        n = data.n_features
        with open(path, "w") as fh:
            for row, lab in zip(data.features, data.labels):
                items = [f"{j + 1}:{float(v)!r}" for j, v in enumerate(row) if v != 0.0 or j == n - 1]
                fh.write(" ".join([str(int(lab))] + items) + "\n")
    else:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")


# --------------------------------------------------------------------------
# normalization


def fit_normalizer(data: Dataset, rows=None) -> NormStats:
    """Per-feature z-score statistics over the observed cells of ``rows``.

    Uses the population divisor. Features observed only once, or constant,
    get a standard deviation of 0.
    """
    x = data.features if rows is None else data.features[np.asarray(rows)]
    m = data.missing if rows is None else data.missing[np.asarray(rows)]
    counts = (~m).sum(axis=0)
    if np.any(counts == 0):
        bad = [data.feature_names[j] for j in np.flatnonzero(counts == 0)]
        raise DataError(f"features entirely missing in the selected rows: {bad}")
    mean = np.nanmean(x, axis=0)
    stdev = np.sqrt(np.nanmean((x - mean) ** 2, axis=0))
    # exact zero for constant columns, not rounding noise
    const = np.array([np.all(col[~mc] == col[~mc][0]) for col, mc in zip(x.T, m.T)])
    stdev[const] = 0.0
    return NormStats(_frozen(mean), _frozen(stdev))


def apply_normalizer(data: Dataset, stats: NormStats) -> Dataset:
    if stats.mean.shape != (data.n_features,) or stats.stdev.shape != (data.n_features,):
        raise DataError(f"normalizer has {stats.mean.shape[0]} features, data has {data.n_features}")
    scale = np.where(stats.stdev > 0, stats.stdev, 1.0)
    z = (data.features - stats.mean) / scale
    z[:, stats.stdev == 0] = 0.0
    z[data.missing] = np.nan
    return data.with_features(z)


def invert_normalizer(data: Dataset, stats: NormStats) -> Dataset:
    """Map normalized values back to the original scale (constant features
    return to their mean)."""
    if stats.mean.shape != (data.n_features,):
        raise DataError(f"normalizer has {stats.mean.shape[0]} features, data has {data.n_features}")
    return data.with_features(data.features * stats.stdev + stats.mean)


# --------------------------------------------------------------------------
# missing-value injection and folds


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def inject_mcar(data: Dataset, ratio: float, seed: int, rows=None) -> Dataset:
    """Mark ``round(ratio * l * n)`` observed cells missing, uniformly at random.

    ``rows`` restricts injection to a row subset (``l`` is then its size).
    A draw that would remove the last observed value of a row is rejected.
    """
    if not 0.0 <= ratio < 1.0:
        raise DataError(f"missing ratio must lie in [0, 1), got {ratio}")
    rows = np.arange(data.n_rows) if rows is None else np.asarray(rows)
    target = _round_half_up(ratio * len(rows) * data.n_features)
    if target == 0:
        return data
    sub_missing = data.missing[rows]
    remaining = (~sub_missing).sum(axis=1)
    capacity = int(np.maximum(remaining - 1, 0).sum())
    if target > capacity:
        raise DataError(f"cannot remove {target} cells without emptying a row "
                        f"(at most {capacity} removable)")
    rng = np.random.default_rng(seed)
    r_idx, c_idx = np.nonzero(~sub_missing)
    order = rng.permutation(len(r_idx))
    chosen = []
    # Skipping a rejected cell is equivalent to redrawing: a row's observed
    # count only decreases, so a rejected cell never becomes eligible again.
    for o in order:
        r = r_idx[o]
        if remaining[r] > 1:
            remaining[r] -= 1
            chosen.append(o)
            if len(chosen) == target:
                break
    chosen = np.array(chosen)
    x = np.array(data.features)
    x[rows[r_idx[chosen]], c_idx[chosen]] = np.nan
    return data.with_features(x)


def stratified_kfold(data, k: int, seed: int) -> FoldSplit:
    """Assign rows to ``k`` folds so each class is spread as evenly as possible.

    ``data`` is a :class:`Dataset` or a label vector.
    """
    labels = data.labels if isinstance(data, Dataset) else np.asarray(data)
    if k < 2:
        raise DataError(f"need k >= 2 folds, got {k}")
    ids, counts = np.unique(labels, return_counts=True)
    if np.any(counts < k):
        raise DataError(f"class {ids[np.argmin(counts)]} has {counts.min()} members, fewer than k={k}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in ids:
        members = rng.permutation(np.flatnonzero(labels == c))
        folds[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return FoldSplit(_frozen(folds), k)


def concat(parts: Sequence[Dataset] | Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    return Dataset(np.vstack([p.features for p in parts]), np.vstack([p.missing for p in parts]),
                   np.concatenate([p.labels for p in parts]), parts[0].name, parts[0].feature_names)
