import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from mlwsvm.dataset import Dataset, inject_mcar
from mlwsvm.errors import DataError
from mlwsvm.imputation import (RemConfig, impute_with_model, mean_initialize, penalized_loglik,
                               regression_coefficients, rem_impute, write_trace)
from synthetic import noisy_line


def _ds(x):
    x = np.asarray(x, dtype=float)
    return Dataset.from_arrays(x, np.where(np.arange(len(x)) % 2, 1, -1))


def _masked(x, ratio, seed):
    return inject_mcar(_ds(x), ratio, seed)


# ------------------------------------------------------------ mean init

def test_mean_initialize_fills_with_observed_mean():
    out = mean_initialize(_ds([[1.0], [np.nan], [3.0]]))
    assert out.features.ravel().tolist() == [1.0, 2.0, 3.0]
    assert out.n_missing == 0


def test_mean_initialize_identity_without_missing():
    d = _ds([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(mean_initialize(d).features, d.features)


def test_mean_initialize_rejects_empty_column():
    with pytest.raises(DataError):
        mean_initialize(_ds([[1.0, np.nan], [2.0, np.nan]]))


def test_config_validation():
    with pytest.raises(ValueError):
        RemConfig(ridge=-1.0)
    with pytest.raises(ValueError):
        RemConfig(rel_tolerance=0.0)


# ------------------------------------------------------------ rem_impute

def test_complete_data_is_returned_unchanged():
    d = _ds(np.random.default_rng(0).normal(size=(10, 3)))
    r = rem_impute(d)
    assert r.sweeps_used == 0
    assert r.completed is d


def test_exact_linear_relation_is_recovered():
    rng = np.random.default_rng(1)
    x1 = rng.normal(size=200)
    x = np.column_stack([x1, 2 * x1 + 1])
    miss = np.zeros_like(x, dtype=bool)
    miss[rng.choice(200, 20, replace=False), 1] = True
    masked = x.copy()
    masked[miss] = np.nan
    r = rem_impute(_ds(masked), RemConfig(ridge=1e-6, max_sweeps=1000, rel_tolerance=1e-10))
    assert np.max(np.abs(r.completed.features[miss] - x[miss])) <= 1e-3


def test_independent_feature_imputed_at_its_mean():
    rng = np.random.default_rng(2)
    l = 10_000
    x = np.column_stack([rng.normal(size=l), rng.normal(size=l)])
    # make the two columns exactly uncorrelated on the rows where both are observed
    miss = np.zeros_like(x, dtype=bool)
    miss[rng.choice(l, 1000, replace=False), 1] = True
    obs = ~miss[:, 1]
    x[obs, 0] -= x[obs, 0].mean()
    x[obs, 1] -= x[obs, 1].mean()
    x[obs, 0] -= (x[obs, 0] @ x[obs, 1]) / (x[obs, 1] @ x[obs, 1]) * x[obs, 1]
    x[~obs, 0] = 0.0
    masked = x.copy()
    masked[miss] = np.nan
    r = rem_impute(_ds(masked))
    observed_mean = x[obs, 1].mean()
    assert np.max(np.abs(r.completed.features[miss] - observed_mean)) <= 1e-6


def _noisy_linear(l, sigma, seed):
    return noisy_line(l, 5, sigma, seed)[1]


@pytest.mark.parametrize("sigma", [0.05, 0.1, 0.3])
def test_recovery_on_noisy_linear_data(sigma):
    x = _noisy_linear(500, sigma, 3)
    d = _masked(x, 0.1, 4)
    r = rem_impute(d)
    rmse = math.sqrt(np.mean((r.completed.features[d.missing] - x[d.missing]) ** 2))
    assert rmse <= 1.5 * sigma


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_observed_cells_untouched_and_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 4)) * rng.uniform(0.1, 100, size=4)
    d = _masked(x, 0.2, seed)
    a, b = rem_impute(d), rem_impute(d)
    obs = ~d.missing
    assert np.array_equal(a.completed.features[obs], d.features[obs])
    assert a.completed.n_missing == 0
    assert np.array_equal(a.completed.features, b.completed.features)
    if a.sweeps_used < RemConfig().max_sweeps:
        assert a.final_change <= RemConfig().rel_tolerance


def test_convergence_on_random_gaussians():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(5, 5))
        x = rng.normal(size=(200, 5)) @ a
        r = rem_impute(_masked(x, 0.1, seed), RemConfig(ridge=1e-6, max_sweeps=100))
        assert r.final_change <= 1e-4, seed


def test_loglik_is_non_decreasing_without_ridge():
    x = _noisy_linear(300, 0.2, 5)
    r = rem_impute(_masked(x, 0.2, 6), RemConfig(ridge=0.0, rel_tolerance=1e-8))
    lls = [h[2] for h in r.history]
    assert all(b >= a - 1e-8 * max(1.0, abs(a)) for a, b in zip(lls, lls[1:]))


def test_trace_file(tmp_path):
    r = rem_impute(_masked(_noisy_linear(50, 0.1, 0), 0.1, 0))
    p = tmp_path / "trace.csv"
    write_trace(r, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "sweep,final_change,penalized_loglik"
    assert len(lines) == r.sweeps_used + 1


def test_frozen_model_single_step():
    mu = np.array([0.0, 1.0])
    sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
    out = impute_with_model(_ds([[2.0, np.nan], [np.nan, 1.0]]), mu, sigma, ridge=0.0)
    assert out.features[0, 1] == pytest.approx(1.0 + 0.5 * 2.0)
    assert out.features[1, 0] == pytest.approx(0.0)


# ---------------------------------------------------------- log-likelihood

def test_loglik_closed_form():
    v = 1e-8
    got = penalized_loglik(np.array([[0.0], [0.0]]), np.array([0.0]), np.array([[v]]), 0.0, min_variance=v)
    assert got == pytest.approx(-2 * 0.5 * math.log(2 * math.pi * v))


def test_zero_ridge_is_plain_loglik():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    mu, sigma = x.mean(0), np.cov(x.T, bias=True)
    expected = multivariate_normal(mu, sigma).logpdf(x).sum()
    assert penalized_loglik(x, mu, sigma, 0.0) == pytest.approx(expected, rel=1e-10)
    assert penalized_loglik(x, mu, sigma, 0.1) < penalized_loglik(x, mu, sigma, 0.0)


def test_loglik_rejects_non_finite():
    with pytest.raises(DataError):
        penalized_loglik(np.array([[np.nan]]), np.zeros(1), np.eye(1), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_ridge_shrinks_coefficients(seed, r1, r2):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 5))
    sigma = a @ a.T + 1e-3 * np.eye(5)
    lo, hi = sorted((r1, r2))
    for j in range(5):
        rest = [i for i in range(5) if i != j]
        b_lo = regression_coefficients(sigma, rest, [j], lo)
        b_hi = regression_coefficients(sigma, rest, [j], hi)
        assert np.linalg.norm(b_hi) <= np.linalg.norm(b_lo) * (1 + 1e-9) + 1e-12
