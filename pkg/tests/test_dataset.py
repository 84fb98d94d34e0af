from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlwsvm.dataset import (SPARSE, Dataset, NormStats, apply_normalizer, fit_normalizer,
                            inject_mcar, invert_normalizer, load_dataset, save_dataset, stratified_kfold)
from mlwsvm.errors import DataError

DATA = Path(__file__).resolve().parents[1] / "data"


def _ds(x, y=None):
    x = np.asarray(x, dtype=float)
    y = np.arange(len(x)) % 2 * 2 - 1 if y is None else y
    return Dataset.from_arrays(x, y)


# ----------------------------------------------------------------- loading

def test_dense_csv_with_one_empty_cell(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,2,1\n3,,-1\n5,6,1\n")
    d = load_dataset(p)
    assert d.n_rows == 3
    assert d.n_missing == 1
    assert d.missing[1, 1] and np.isnan(d.features[1, 1])
    assert d.feature_names == ("a", "b")


def test_label_column_can_be_anywhere(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("cls,a\n2,0.5\n3,1.5\n")
    d = load_dataset(p, label_column="cls")
    assert d.labels.tolist() == [2, 3]
    assert d.features[:, 0].tolist() == [0.5, 1.5]


@pytest.mark.parametrize("body,fragment", [
    ("a,label\n1,1\n2\n", "line 3"),
    ("a,label\nx,1\n", "line 2"),
    ("", "empty"),
])
def test_malformed_files_report_the_line(tmp_path, body, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=fragment):
        load_dataset(p)


def test_sparse_zeros_are_values(tmp_path):
    p = tmp_path / "d.svm"
    p.write_text("1 1:0.5 3:2\n-1 2:1\n")
    d = load_dataset(p, SPARSE)
    assert d.n_missing == 0
    assert d.features.tolist() == [[0.5, 0.0, 2.0], [0.0, 1.0, 0.0]]


def test_twonorm_class_counts():
    path = DATA / "twonorm.csv"
    d = load_dataset(path)
    assert (d.n_rows, d.n_features) == (7400, 20)
    assert d.class_counts() == {-1: 3697, 1: 3703}


def test_hypothyroid_shape():
    path = DATA / "hypothyroid.csv"
    if not path.exists():
        pytest.skip("hypothyroid.csv is not shipped (see README)")
    d = load_dataset(path).binarize()
    assert (d.n_rows, d.n_features) == (3919, 21)
    assert d.class_counts()[1] == 240


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.data())
def test_dense_round_trip(tmp_path_factory, l, n, data):
    x = np.array(data.draw(st.lists(st.lists(finite, min_size=n, max_size=n), min_size=l, max_size=l)))
    miss = np.array(data.draw(st.lists(st.lists(st.booleans(), min_size=n, max_size=n),
                                       min_size=l, max_size=l)))
    x[miss] = np.nan
    y = np.array(data.draw(st.lists(st.sampled_from([-1, 1, 3]), min_size=l, max_size=l)))
    d = Dataset.from_arrays(x, y)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    save_dataset(d, p)
    back = load_dataset(p)
    assert np.array_equal(back.missing, d.missing)
    assert np.array_equal(back.features[~d.missing], d.features[~d.missing])
    assert np.array_equal(back.labels, d.labels)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.data())
def test_sparse_round_trip(tmp_path_factory, l, n, data):
    x = np.array(data.draw(st.lists(st.lists(st.one_of(st.just(0.0), finite), min_size=n, max_size=n),
                                    min_size=l, max_size=l)))
    y = np.array(data.draw(st.lists(st.sampled_from([-1, 1]), min_size=l, max_size=l)))
    d = Dataset.from_arrays(x, y)
    p = tmp_path_factory.mktemp("rt") / "d.svm"
    save_dataset(d, p, SPARSE)
    back = load_dataset(p, SPARSE)
    assert np.array_equal(back.features, d.features)
    assert np.array_equal(back.labels, d.labels)


def test_invariants_reject_inconsistent_mask():
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, np.nan]]), np.array([[False, False]]), np.array([1]))
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, 2.0]]), np.array([[False, True]]), np.array([1]))


def test_binarize_maps_minority_to_positive():
    d = _ds(np.zeros((5, 1)), np.array([7, 7, 7, 2, 2]))
    b = d.binarize()
    assert b.labels.tolist() == [-1, -1, -1, 1, 1]


# ----------------------------------------------------------- normalization

def test_two_point_statistics():
    s = fit_normalizer(_ds([[2.0], [4.0]]))
    assert s.mean.tolist() == [3.0]
    assert s.stdev.tolist() == [1.0]


def test_constant_column_maps_to_zero():
    d = _ds([[5.0], [5.0], [5.0]])
    s = fit_normalizer(d)
    assert s.stdev.tolist() == [0.0]
    assert apply_normalizer(d, s).features.ravel().tolist() == [0.0, 0.0, 0.0]


def test_missing_cells_are_ignored_and_kept():
    d = _ds([[1.0], [np.nan], [3.0]])
    s = fit_normalizer(d)
    assert s.mean.tolist() == [2.0]
    z = apply_normalizer(d, s)
    assert z.missing[1, 0] and np.isnan(z.features[1, 0])


def test_apply_examples():
    s = NormStats(np.array([3.0]), np.array([1.0]))
    z = apply_normalizer(_ds([[3.0], [5.0]]), s)
    assert z.features.ravel().tolist() == [0.0, 2.0]


def test_dimension_mismatch():
    with pytest.raises(DataError):
        apply_normalizer(_ds([[1.0, 2.0]]), NormStats(np.zeros(1), np.ones(1)))


def test_entirely_missing_feature():
    d = _ds([[1.0, np.nan], [2.0, np.nan]])
    with pytest.raises(DataError):
        fit_normalizer(d)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(1, 5), st.integers(0, 10_000))
def test_normalized_columns_are_standard(l, n, seed):
    x = np.random.default_rng(seed).normal(3.0, 7.0, size=(l, n))
    d = _ds(x)
    z = apply_normalizer(d, fit_normalizer(d)).features
    assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-10)
    back = invert_normalizer(Dataset.from_arrays(z, d.labels), fit_normalizer(d)).features
    assert np.max(np.abs(back - x)) < 1e-12 * max(1.0, np.abs(x).max())


# ----------------------------------------------------------- MCAR injection

def test_zero_ratio_is_identity():
    d = _ds(np.ones((4, 3)))
    assert inject_mcar(d, 0.0, 1) is d


def test_exact_count():
    d = _ds(np.ones((10, 10)))
    assert inject_mcar(d, 0.20, 3).n_missing == 20


def test_same_seed_same_mask():
    d = _ds(np.ones((30, 8)))
    a, b, c = inject_mcar(d, 0.3, 5), inject_mcar(d, 0.3, 5), inject_mcar(d, 0.3, 6)
    assert np.array_equal(a.missing, b.missing)
    assert not np.array_equal(a.missing, c.missing)


def test_unsatisfiable_ratio():
    with pytest.raises(DataError):
        inject_mcar(_ds(np.ones((4, 2))), 0.9, 0)


def test_injection_respects_rows():
    d = _ds(np.ones((10, 4)))
    out = inject_mcar(d, 0.5, 0, rows=np.arange(5))
    assert out.n_missing == 10
    assert not out.missing[5:].any()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(1, 8), st.floats(0, 0.95), st.integers(0, 1000))
def test_mcar_count_and_no_empty_row(l, n, ratio, seed):
    x = np.random.default_rng(seed).normal(size=(l, n))
    x[np.random.default_rng(seed + 1).random((l, n)) < 0.1] = np.nan
    x[:, 0] = 1.0
    d = _ds(x)
    target = int(np.floor(ratio * l * n + 0.5))
    capacity = int(((~d.missing).sum(axis=1) - 1).sum())
    if target > capacity:
        with pytest.raises(DataError):
            inject_mcar(d, ratio, seed)
        return
    out = inject_mcar(d, ratio, seed)
    assert out.n_missing == d.n_missing + target
    assert np.all(out.missing | ~d.missing)
    assert np.all((~out.missing).sum(axis=1) >= 1)


# -------------------------------------------------------------- k-fold

def _fold_class_counts(split, labels):
    return {c: sorted(np.sum(labels[split.test_rows(f)] == c) for f in range(split.k))
            for c in np.unique(labels)}


def test_exact_divisibility():
    y = np.array([1] * 10 + [-1] * 10)
    s = stratified_kfold(y, 5, 0)
    for f in range(5):
        assert sorted(y[s.test_rows(f)].tolist()) == [-1, -1, 1, 1]


def test_pigeonhole():
    y = np.array([1] * 7 + [-1] * 20)
    assert _fold_class_counts(stratified_kfold(y, 5, 1), y)[1] == [1, 1, 1, 2, 2]


def test_two_folds_of_four():
    y = np.array([1, 1, -1, -1])
    s = stratified_kfold(y, 2, 0)
    for f in range(2):
        assert sorted(y[s.test_rows(f)].tolist()) == [-1, 1]


def test_too_few_members():
    with pytest.raises(DataError):
        stratified_kfold(np.array([1, -1, -1, -1]), 2, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.lists(st.integers(0, 40), min_size=1, max_size=4), st.integers(0, 99))
def test_stratification_balance(k, extra, seed):
    sizes = [k + e for e in extra]
    y = np.concatenate([np.full(s, c) for c, s in enumerate(sizes)])
    s = stratified_kfold(y, k, seed)
    assert set(s.fold_assignments.tolist()) == set(range(k))
    for counts in _fold_class_counts(s, y).values():
        assert counts[-1] - counts[0] <= 1
    assert np.array_equal(s.fold_assignments, stratified_kfold(y, k, seed).fold_assignments)
    rows = np.concatenate([s.test_rows(f) for f in range(k)])
    assert sorted(rows.tolist()) == list(range(len(y)))
