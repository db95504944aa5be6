import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from akirisk.config import ConfigError
from akirisk.evaluation.metrics import roc_auc
from akirisk.learners import (CalibrationError, ConvergenceWarning, GbcConfig, SelectionError,
                              fit_gbc, fit_impute_most_frequent, fit_l1_least_squares,
                              fit_l1_logistic, fit_platt, fit_ridge_logistic,
                              fit_stability_logistic, fit_standard_scale, gini_importance,
                              patient_weights, sample_one_per_patient, stability_select)
from akirisk.learners.logistic import class_multipliers
from akirisk.learners.weighting import patient_weights_exact


def logistic_problem(seed, n=200, p=20, k=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    eta = X[:, :k].sum(axis=1) - 0.5
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return X, y


def fd_gradient(X, y, w, coef, b, h=1e-5):
    """Central finite differences of the weighted log loss."""
    def loss(beta):
        eta = X @ beta + b
        return np.sum(w * (np.logaddexp(0.0, eta) - y * eta))
    g = np.empty_like(coef)
    for j in range(len(coef)):
        e = np.zeros_like(coef)
        e[j] = h
        g[j] = (loss(coef + e) - loss(coef - e)) / (2 * h)
    return g


# -- preprocessing ---------------------------------------------------------

def test_impute_examples():
    imp = fit_impute_most_frequent(np.array([[1.0], [1.0], [2.0], [np.nan]]))
    assert imp.transform(np.array([[np.nan]]))[0, 0] == 1.0
    imp = fit_impute_most_frequent(np.array([[3.0], [np.nan], [3.0]]))
    assert imp.transform(np.array([[np.nan]]))[0, 0] == 3.0
    imp = fit_impute_most_frequent(np.array([[1.0], [1.0], [2.0], [2.0], [np.nan]]))
    assert imp.fill[0] == 1.0


def test_impute_all_missing_names_feature():
    with pytest.raises(ConfigError, match="max.GLUCOSE"):
        fit_impute_most_frequent(np.array([[np.nan], [np.nan]]), ["max.GLUCOSE"])


def test_scale_examples():
    sc = fit_standard_scale(np.array([[0.0, 5.0], [2.0, 5.0]]))
    np.testing.assert_array_equal(sc.transform(np.array([[0.0, 5.0], [2.0, 5.0]])),
                                  [[-1.0, 0.0], [1.0, 0.0]])
    sc = fit_standard_scale(np.array([[0.0], [4.0]]))
    assert sc.transform(np.array([[4.0]]))[0, 0] == 1.0


def test_preprocessing_never_reads_test_rows():
    rng = np.random.default_rng(0)
    train = rng.normal(size=(50, 4))
    train[rng.random((50, 4)) < 0.2] = np.nan
    imp = fit_impute_most_frequent(train)
    sc = fit_standard_scale(imp.transform(train))
    test = rng.normal(size=(10, 4))
    before = sc.transform(imp.transform(test))
    test_corrupt = test.copy()
    test_corrupt[0] = 1e9
    after = sc.transform(imp.transform(test_corrupt))
    np.testing.assert_array_equal(before[1:], after[1:])


# -- L1 logistic -----------------------------------------------------------

def test_full_shrinkage_gives_weighted_log_odds():
    x = np.array([0, 0, 0, 1, 1, 0, 0, 0, 0, 1], dtype=float)
    y = x.copy()
    fit = fit_l1_logistic(x[:, None], y, C=1e-4)
    assert fit.coef[0] == 0.0
    assert math.isclose(fit.intercept, math.log(0.3 / 0.7), abs_tol=1e-8)
    fit = fit_l1_logistic(x[:, None], y, C=1e-4, class_weighting="balanced")
    assert math.isclose(fit.intercept, 0.0, abs_tol=1e-8)


def test_duplicate_columns_share_no_weight():
    X, y = logistic_problem(1, p=3)
    X = np.column_stack([X[:, 0], X[:, 0], X[:, 1:]])
    fit = fit_l1_logistic(X, y, C=0.05)
    assert np.count_nonzero(fit.coef[:2]) <= 1
    assert np.any(fit.coef[:2] != 0)


@pytest.mark.parametrize("seed", range(5))
def test_kkt_against_finite_differences(seed):
    X, y = logistic_problem(seed)
    C = 0.05
    w = np.random.default_rng(seed).uniform(0.5, 2.0, size=len(y))
    fit = fit_l1_logistic(X, y, w, C=C, class_weighting="balanced")
    ww = w * class_multipliers(y.astype(int), "balanced")
    g = fd_gradient(X, y, ww, fit.coef, fit.intercept)
    zero = fit.coef == 0
    assert zero.any() and (~zero).any()
    assert np.all(np.abs(g[zero]) <= 1 / C + 1e-4)
    assert np.all(np.abs(g[~zero] + np.sign(fit.coef[~zero]) / C) <= 1e-4)


def test_gram_and_naive_kernels_agree():
    X, y = logistic_problem(7, n=60, p=40)
    wide = fit_l1_logistic(X[:30], y[:30], C=0.5, tol=1e-10)     # n < p path
    X2 = np.vstack([X[:30]] * 2)
    y2 = np.concatenate([y[:30]] * 2)
    tall = fit_l1_logistic(X2, y2, C=0.25, tol=1e-10)            # same problem, n >= p path
    np.testing.assert_allclose(wide.coef, tall.coef, atol=1e-6)
    assert math.isclose(wide.intercept, tall.intercept, abs_tol=1e-6)


def test_penalty_factor_zero_is_unpenalised():
    X, y = logistic_problem(2, p=4)
    fit = fit_l1_logistic(X, y, C=1e-6, penalty_factor=[0, 1, 1, 1])
    assert fit.coef[0] != 0 and np.all(fit.coef[1:] == 0)


def test_nonconvergence_warns_with_kkt():
    X, y = logistic_problem(3)
    with pytest.warns(ConvergenceWarning, match="KKT residual"):
        fit_l1_logistic(X, y, C=10.0, max_newton=1)


def test_class_multipliers_balanced():
    y = np.array([1, 0, 0, 0])
    np.testing.assert_allclose(class_multipliers(y, "balanced"), [2.0, 2 / 3, 2 / 3, 2 / 3])


def test_ridge_large_c_matches_unpenalised_fit():
    X, y = logistic_problem(4, n=500, p=4)
    ridge = fit_ridge_logistic(X, y, C=1000.0)

    def nll(t):
        eta = X @ t[:-1] + t[-1]
        return np.sum(np.logaddexp(0.0, eta) - y * eta)

    def grad(t):
        r = 1 / (1 + np.exp(-(X @ t[:-1] + t[-1]))) - y
        return np.append(X.T @ r, r.sum())

    ref = minimize(nll, np.zeros(5), jac=grad, method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(ridge.coef, ref[:-1], atol=1e-3)


def test_lasso_orthogonal_design_soft_thresholds():
    n = 400
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.normal(size=(n, 3)))
    X = Q * math.sqrt(n)                 # centred-free columns with X'X/n = I
    X -= X.mean(axis=0)
    X /= np.sqrt((X ** 2).mean(axis=0))
    y = X @ np.array([0.5, -0.2, 0.05]) + 0.01 * rng.normal(size=n)
    alpha = 0.1
    fit = fit_l1_least_squares(X, y, alpha)
    ols = np.linalg.lstsq(np.column_stack([X, np.ones(n)]), y, rcond=None)[0][:3]
    # near-orthogonal after centring, so the lasso is close to soft-thresholded OLS
    np.testing.assert_allclose(fit.coef, np.sign(ols) * np.maximum(np.abs(ols) - alpha, 0), atol=0.02)
    assert fit.coef[2] == 0.0


def test_lasso_zero_response():
    X = np.random.default_rng(0).normal(size=(50, 3))
    fit = fit_l1_least_squares(X, np.zeros(50), 0.01)
    assert np.all(fit.coef == 0) and fit.intercept == 0.0


# -- gradient boosting -----------------------------------------------------

def xor_data(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    return X, y


def test_gbc_single_class_predicts_prior():
    X = np.random.default_rng(0).normal(size=(300, 3))
    model = fit_gbc(X, np.zeros(300))
    assert np.all(model.predict_proba(X) < 1e-12)
    assert model.trees == []


def test_gbc_learns_xor_where_linear_cannot():
    X, y = xor_data()
    assert roc_auc(fit_gbc(X, y).predict_proba(X), y) > 0.95
    lin = fit_l1_logistic(X, y, C=1.0)
    assert roc_auc(lin.decision_function(X), y) < 0.6


def test_gbc_deviance_non_increasing_and_leaf_sizes():
    X, y = xor_data(seed=1)
    cfg = GbcConfig()
    model = fit_gbc(X, y, config=cfg)
    dev = np.array(model.train_deviance)
    assert np.all(np.diff(dev) <= 1e-12)
    for t in model.trees:
        leaves = t.apply(X)
        assert len(np.unique(leaves)) <= 4
        assert np.bincount(leaves)[np.unique(leaves)].min() >= cfg.min_samples_leaf


@pytest.mark.parametrize("j", [0, 2])
def test_gbc_monotone_transform_invariance(j):
    rng = np.random.default_rng(9)
    X = rng.exponential(size=(800, 4)).round(2)
    y = (rng.random(800) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 2])))).astype(float)
    base = fit_gbc(X, y).predict_proba(X)
    Xt = X.copy()
    Xt[:, j] = np.log1p(Xt[:, j])
    assert np.max(np.abs(fit_gbc(Xt, y).predict_proba(Xt) - base)) <= 1e-12


def test_gini_importance_properties():
    X, y = xor_data(seed=2)
    X = np.column_stack([np.random.default_rng(3).normal(size=(1000, 5)), X[:, 0]])
    y = (X[:, 5] > 0).astype(float)
    stumps = fit_gbc(X, y, config=GbcConfig(max_depth=1, n_estimators=20))
    imp = gini_importance(stumps)
    assert imp[5] == 1.0
    model = fit_gbc(*xor_data(seed=4))
    imp = gini_importance(model)
    assert np.all(imp >= 0) and math.isclose(imp.sum(), 1.0, abs_tol=1e-9)


def test_gini_ranks_planted_feature_first():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(2000, 10))
    y = (rng.random(2000) < 1 / (1 + np.exp(-(2 * X[:, 3] - 2)))).astype(float)
    assert np.argmax(gini_importance(fit_gbc(X, y))) == 3


# -- Platt -----------------------------------------------------------------

def test_platt_identity_on_true_log_odds():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.02, 0.98, size=50_000)
    y = (rng.random(p.size) < p).astype(float)
    cal = fit_platt(np.log(p / (1 - p)), y)
    grid = np.linspace(0.1, 0.9, 81)
    assert np.max(np.abs(cal(np.log(grid / (1 - grid))) - grid)) < 0.02


def test_platt_uninformative_scores_give_prevalence():
    rng = np.random.default_rng(1)
    s = rng.normal(size=20_000)
    y = (rng.random(s.size) < 0.1).astype(float)
    out = fit_platt(s, y)(np.linspace(-3, 3, 13))
    assert np.all(np.abs(out - 0.1) < 0.02)


def test_platt_single_class_errors():
    with pytest.raises(CalibrationError, match="larger"):
        fit_platt([0.1, 0.2], [1, 1])


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=40), st.integers(0, 2**32 - 1))
def test_platt_monotone_and_inside_unit_interval(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, size=len(scores))
    y[0], y[1] = 0, 1
    cal = fit_platt(scores, y)
    grid = np.linspace(-10, 10, 101)
    out = cal(grid)
    assert np.all((out > 0) & (out < 1))
    d = np.diff(out)
    assert np.all(d >= 0) if cal.a >= 0 else np.all(d <= 0)


# -- stability selection ---------------------------------------------------

def planted_selection_data(seed=0, n=2000, p=50):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    eta = -2.5 + X[:, 0] + X[:, 1] - X[:, 2]
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return X, y


def test_stability_recovers_planted_features():
    X, y = planted_selection_data()
    rep = stability_select(X, y, C1=0.01, resamples=50, seed=1)
    assert np.all(rep.frequency[:3] >= 0.9)
    assert np.median(rep.frequency[3:]) <= 0.2
    assert np.allclose(rep.frequency * 50, np.round(rep.frequency * 50))


def test_stability_keeps_both_correlated_copies():
    X, y = planted_selection_data(seed=2)
    rng = np.random.default_rng(3)
    z = rng.normal(size=len(y))
    X[:, 0] = z + 0.3 * rng.normal(size=len(y))
    X[:, 1] = z + 0.3 * rng.normal(size=len(y))
    y = (rng.random(len(y)) < 1 / (1 + np.exp(-(-2.5 + 1.5 * z + X[:, 2])))).astype(float)
    rep = stability_select(X, y, C1=0.01, resamples=50, seed=1)
    assert rep.frequency[0] >= 0.5 and rep.frequency[1] >= 0.5


def test_stability_exact_copies_split_selection():
    X, y = planted_selection_data(seed=4)
    X[:, 1] = X[:, 0]
    rep = stability_select(X, y, C1=0.01, resamples=50, seed=1)
    assert rep.frequency[0] + rep.frequency[1] >= 0.9
    assert min(rep.frequency[0], rep.frequency[1]) > 0


def test_stability_single_resample_is_binary_and_deterministic():
    X, y = planted_selection_data(seed=5, n=400, p=10)
    a = stability_select(X, y, C1=0.05, resamples=1, seed=3)
    assert set(np.unique(a.frequency)) <= {0.0, 1.0}
    b = stability_select(X, y, C1=0.05, resamples=1, seed=3)
    np.testing.assert_array_equal(a.frequency, b.frequency)


def test_stability_empty_selection_errors():
    X, y = planted_selection_data(seed=6, n=300, p=5)
    with pytest.raises(SelectionError, match="lower the threshold"):
        fit_stability_logistic(X, y, C1=1e-6, C2=1.0, resamples=3)


# -- patient weights and sampling ------------------------------------------

def test_patient_weight_examples():
    pids = ["a", "a", "a", "b", "c", "c"]
    w = patient_weights(pids)
    np.testing.assert_allclose(w, [1 / 3] * 3 + [1.0] + [0.5] * 2)


@given(st.lists(st.sampled_from("abcdefghij"), min_size=1, max_size=60))
def test_patient_weights_sum_exactly_per_patient(pids):
    w = patient_weights_exact(pids)
    per = {}
    for p, v in zip(pids, w):
        per[p] = per.get(p, 0) + v
    assert all(v == 1 for v in per.values())
    assert sum(w) == len(set(pids))


def test_one_sample_per_patient():
    pids = [f"p{i // 3}" for i in range(30)]
    idx = sample_one_per_patient(pids, 0)
    assert len(idx) == 10 and len({pids[i] for i in idx}) == 10
    np.testing.assert_array_equal(idx, sample_one_per_patient(pids, 0))


def test_one_sample_per_patient_is_uniform():
    pids = ["a"] * 4 + ["b"] * 2
    counts = np.zeros(6)
    for seed in range(10_000):
        counts[sample_one_per_patient(pids, seed)] += 1
    for group, k in (((0, 1, 2, 3), 4), ((4, 5), 2)):
        expect = 10_000 / k
        sd = math.sqrt(10_000 * (1 / k) * (1 - 1 / k))
        assert np.all(np.abs(counts[list(group)] - expect) <= 3 * sd)
