import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from akirisk.evaluation import (MetricRecord, bootstrap_ci, brier, calibration_curve,
                                correlated_ttest, error_by_diagnosis_method, grouped_kfold,
                                log_loss, loo_patient_perturbation, micro_macro, patient_level,
                                permute_labels, pr_auc, roc_auc, run_cv, utilization_analysis)
from akirisk.evaluation.analysis import error_analysis, error_regression
from akirisk.evaluation.metrics import UndefinedMetric, all_metrics
from akirisk.learners import fit_l1_logistic
from akirisk.systems import get_system

TINY_GBC = dict(n_estimators=10, min_samples_split=40, min_samples_leaf=20)


def concordance(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    tot = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in product(pos, neg))
    return tot / (len(pos) * len(neg))


def average_precision(scores, labels):
    """Sum over distinct thresholds of (recall step) * precision."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= t
        tp = labels[sel].sum()
        recall = tp / labels.sum()
        total += (recall - prev_recall) * tp / sel.sum()
        prev_recall = recall
    return total


# -- metrics ---------------------------------------------------------------

def test_roc_matches_concordance():
    rng = np.random.default_rng(0)
    s = rng.random(200).round(2)       # rounding creates ties
    y = rng.integers(0, 2, 200)
    assert abs(roc_auc(s, y) - concordance(s, y)) <= 1e-12


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=80))
def test_roc_and_pr_match_oracles(pairs):
    s = np.array([p[0] / 20 for p in pairs])
    y = np.array([int(p[1]) for p in pairs])
    if y.min() == y.max():
        with pytest.raises(UndefinedMetric):
            roc_auc(s, y)
        return
    assert abs(roc_auc(s, y) - concordance(s, y)) <= 1e-12
    assert abs(pr_auc(s, y) - average_precision(s, y)) <= 1e-12


def test_metric_examples():
    y = np.array([0, 0, 1, 1])
    assert roc_auc([0.1, 0.2, 0.8, 0.9], y) == 1.0
    assert pr_auc([0.1, 0.2, 0.8, 0.9], y) == 1.0
    assert brier([0.1, 0.2, 0.8, 0.9], y) == pytest.approx((0.01 + 0.04 + 0.04 + 0.01) / 4)
    assert brier(np.full(4, 0.5), y) == 0.25
    assert brier(y, y) == 0.0
    assert math.isfinite(log_loss([0.0, 1.0], [1, 0]))
    m = all_metrics([0.2, 0.3], [0, 0])
    assert math.isnan(m["roc_auc"]) and math.isnan(m["pr_auc"]) and m["brier"] > 0


@given(st.floats(0, 1), st.lists(st.booleans(), min_size=1, max_size=200))
def test_brier_constant_closed_form(c, ys):
    y = np.array(ys, dtype=float)
    pi = y.mean()
    assert abs(brier(np.full(len(y), c), y) - (c * c * (1 - pi) + (1 - c) ** 2 * pi)) <= 1e-12


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=200))
def test_calibration_curve_reconstruction(pairs):
    p = np.array([a for a, _ in pairs])
    y = np.array([b for _, b in pairs], dtype=float)
    cur = calibration_curve(p, y)
    assert cur.count.sum() == len(p)
    ok = cur.count > 0
    assert round(float((cur.count[ok] * cur.observed[ok]).sum())) == int(y.sum())
    np.testing.assert_allclose(np.diff(cur.edges), 0.1)


def test_calibration_bin_edges():
    cur = calibration_curve([0.0, 0.0999, 0.1, 0.95, 1.0], [0, 0, 1, 1, 1])
    assert cur.count.tolist() == [2, 1, 0, 0, 0, 0, 0, 0, 0, 2]


# -- grouped folds -----------------------------------------------------------

def test_grouped_kfold_examples():
    pids = [f"p{i}" for i in range(10)]
    folds = grouped_kfold(pids, 5, seed=0)
    assert [len(f) for f in folds] == [2] * 5
    again = grouped_kfold(pids, 5, seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))
    with pytest.raises(ValueError):
        grouped_kfold(pids[:4], 5, seed=0)


@given(st.lists(st.integers(0, 40), min_size=5, max_size=200), st.integers(2, 5), st.integers(0, 99))
def test_grouped_kfold_partition(ids, k, seed):
    pids = [f"p{i}" for i in ids]
    if len(set(pids)) < k:
        return
    folds = grouped_kfold(pids, k, seed)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    flat = np.concatenate(folds)
    assert sorted(flat.tolist()) == sorted(set(pids))


# -- cross-validation driver -------------------------------------------------

def test_run_cv_single_iteration(small_cohort):
    c = small_cohort
    system = get_system("GBC").with_params(**TINY_GBC)
    rep = run_cv(c.matrix, c.y, c.pids, system, iterations=1, k=5, seed=3)
    assert len(rep.records) == 5
    assert np.all(~np.isnan(rep.predictions))
    assert all(rep.invariants.values())
    # a sample's fold is the fold holding its patient
    for f in range(5):
        in_fold = rep.fold_of[0] == f
        others = rep.fold_of[0] != f
        assert not set(c.pids[in_fold]) & set(c.pids[others])


def test_run_cv_independent_of_jobs(small_cohort):
    c = small_cohort
    system = get_system("LR1")
    a = run_cv(c.matrix, c.y, c.pids, system, iterations=1, k=5, seed=5, jobs=1)
    b = run_cv(c.matrix, c.y, c.pids, system, iterations=1, k=5, seed=5, jobs=2)
    np.testing.assert_array_equal(a.predictions, b.predictions)


def test_single_class_fold_is_flagged():
    recs = [MetricRecord("S", 0, f, v, v, 0.1, 0.3) for f, v in enumerate([0.7, 0.8, float("nan")])]
    out = micro_macro(recs, "roc_auc")
    assert out["n_undefined"] == 1 and out["n_records"] == 2
    assert out["micro_mean"] == pytest.approx(0.75)


# -- micro / macro -----------------------------------------------------------

def records(values):
    return [MetricRecord("S", i, f, v, v, v, v) for (i, f), v in values.items()]


def test_micro_macro_identical():
    out = micro_macro(records({(i, f): 0.8 for i in range(50) for f in range(5)}), "roc_auc")
    got = (out["micro_mean"], out["micro_sd"], out["macro_mean"], out["macro_sd"])
    assert got == pytest.approx((0.8, 0, 0.8, 0), abs=1e-12)


def test_micro_macro_alternating():
    vals = {(i, f): (0.7 if f % 2 else 0.9) for i in range(10) for f in range(4)}
    out = micro_macro(records(vals), "roc_auc")
    assert out["macro_sd"] == 0 and out["micro_sd"] > 0


@given(st.lists(st.floats(0, 1), min_size=10, max_size=10))
def test_micro_mean_equals_mean_of_iteration_means(vals):
    out = micro_macro(records({(i // 5, i % 5): v for i, v in enumerate(vals)}), "brier")
    assert out["micro_mean"] == pytest.approx(out["macro_mean"], abs=1e-12)


# -- correlated t-test -------------------------------------------------------

def quadrature_triple(d, rope, rho):
    n = len(d)
    loc, s2 = np.mean(d), np.var(d, ddof=1)
    scale = math.sqrt((1 / n + rho / (1 - rho)) * s2)
    pdf = lambda x: stats.t.pdf((x - loc) / scale, n - 1) / scale
    h = rope / 2
    lo = integrate.quad(pdf, -np.inf, -h, epsabs=1e-13, epsrel=1e-13)[0]
    mid = integrate.quad(pdf, -h, h, epsabs=1e-13, epsrel=1e-13)[0]
    hi = integrate.quad(pdf, h, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    return hi, mid, lo


def test_ttest_point_masses():
    assert correlated_ttest(np.zeros(250), 0.01).as_tuple() == (0.0, 1.0, 0.0)
    assert correlated_ttest(np.full(250, 0.1), 0.01).as_tuple() == (1.0, 0.0, 0.0)
    assert correlated_ttest(np.full(250, -0.1), 0.01).as_tuple() == (0.0, 0.0, 1.0)


def test_ttest_matches_quadrature():
    rng = np.random.default_rng(0)
    d = rng.normal(size=250)
    d = 0.007 + 0.006 * (d - d.mean()) / d.std(ddof=1)
    got = correlated_ttest(d, 0.01, 0.2).as_tuple()
    assert np.max(np.abs(np.array(got) - quadrature_triple(d, 0.01, 0.2))) < 1e-6


@settings(max_examples=50)
@given(st.lists(st.floats(-0.05, 0.05), min_size=2, max_size=40), st.floats(0.001, 0.05))
def test_ttest_sums_to_one_and_shift_is_monotone(d, rope):
    d = np.array(d)
    a = correlated_ttest(d, rope)
    b = correlated_ttest(d + rope, rope)
    assert abs(sum(a.as_tuple()) - 1) <= 1e-9
    assert b.p_higher >= a.p_higher - 1e-12 and b.p_lower <= a.p_lower + 1e-12


# -- bootstrap -----------------------------------------------------------------

def test_bootstrap_examples():
    assert bootstrap_ci(np.full(10, 3.0)) == (3.0, 3.0)
    v = np.random.default_rng(0).normal(size=10_000)
    lo, hi = bootstrap_ci(v, seed=1)
    assert lo <= v.mean() <= hi
    assert abs(lo - (v.mean() - 0.0196)) < 0.003 and abs(hi - (v.mean() + 0.0196)) < 0.003
    assert bootstrap_ci(v, seed=1) == (lo, hi)


@settings(max_examples=30)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50))
def test_bootstrap_brackets_mean(v):
    lo, hi = bootstrap_ci(v, iterations=500, seed=0)
    m = float(np.mean(v))
    assert lo - 1e-9 * max(1, abs(m)) <= m <= hi + 1e-9 * max(1, abs(m))


# -- patient level -----------------------------------------------------------

def test_patient_level_examples():
    pl = patient_level([0.2, 0.4, 0.7], [1, 0, 1], ["a", "a", "b"])
    assert pl.observed.tolist() == [0.5, 1.0]
    assert pl.predicted.tolist() == pytest.approx([0.3, 0.7])
    assert pl.curve.count.sum() == 1       # only the pure patient b


def test_patient_level_well_calibrated():
    rng = np.random.default_rng(0)
    p = rng.random(100_000)
    y = (rng.random(p.size) < p).astype(float)
    pl = patient_level(p, y, np.arange(p.size).astype(str))
    ok = pl.curve.count >= 500
    assert ok.all()
    assert np.all(np.abs(pl.curve.observed - pl.curve.mean_predicted) < 0.05)


# -- error analysis ----------------------------------------------------------

def test_error_regression_null_and_zero():
    rng = np.random.default_rng(0)
    n = 600
    X = rng.poisson(1.0, size=(n, 4)).astype(float)
    pids = np.repeat(np.arange(200), 3).astype(str)
    e = rng.uniform(0, 0.2, size=n)
    null = error_regression(e, X, list("abcd"), pids, alpha=0.05, iterations=2, seed=0,
                            bootstrap_iterations=200)
    assert np.all(null.coef == 0)
    zero = error_regression(np.zeros(n), X, list("abcd"), pids, alpha=0.01, iterations=2,
                            bootstrap_iterations=200)
    assert np.all(zero.coef == 0) and np.all(zero.fold_intercepts == 0) and zero.test_mse == 0


def test_error_regression_planted():
    rng = np.random.default_rng(1)
    n = 900
    X = rng.poisson(1.0, size=(n, 3)).astype(float)
    pids = np.repeat(np.arange(300), 3).astype(str)
    e = np.clip(0.05 + 0.08 * X[:, 1] + rng.normal(0, 0.03, n), 0, 1)
    fit = error_regression(e, X, ["x0", "x1", "x2"], pids, alpha=1e-3, iterations=3,
                           bootstrap_iterations=2000)
    assert fit.coef[1] > 0 and fit.ci_low[1] > 0
    with pytest.raises(ValueError):
        error_regression(e + 2, X, ["x0", "x1", "x2"], pids, alpha=0.0, iterations=1)


def test_error_analysis_covers_strata(small_cohort):
    c = small_cohort
    preds = np.clip(0.06 + 0.01 * np.random.default_rng(0).normal(size=len(c.y)), 0, 1)
    out = error_analysis(preds, c.y, c.matrix, c.pids, iterations=1, bootstrap_iterations=100,
                         feature_sets=("gender", "age"))
    assert {(r.stratum, r.feature_set) for r in out} == {
        ("cases", "gender"), ("cases", "age"), ("controls", "gender"), ("controls", "age")}


# -- utilization -------------------------------------------------------------

def test_utilization_single_bin_and_deterministic():
    pids = ["a", "b", "c", "d"]
    P = np.tile([0.1, 0.2, 0.8, 0.3], (3, 1))
    rep = utilization_analysis(P, [0, 0, 1, 1], pids)
    assert {b.hospitalizations for b in rep.bins} == {2}
    assert all(b.mean_prediction_sd == 0 for b in rep.bins)


def test_utilization_matches_enumeration():
    rng = np.random.default_rng(0)
    pids = np.array([f"p{i}" for i in rng.integers(0, 30, size=120)])
    y = rng.integers(0, 2, size=120).astype(float)
    P = rng.random((4, 120))
    rep = utilization_analysis(P, y, pids, bins=[2, 3, 4, 99])
    counts = {p: (pids == p).sum() + 1 for p in set(pids)}
    for b in rep.bins:
        m = np.array([counts[p] == b.hospitalizations for p in pids]) & (y == (b.outcome == "case"))
        err = np.abs(P.mean(axis=0) - y)[m]
        assert b.n_samples == m.sum()
        assert b.mean_abs_error == pytest.approx(err.mean())
        assert b.mean_prediction_sd == pytest.approx(P.std(axis=0)[m].mean())
    assert any("99" in note for note in rep.notes)


# -- leave one patient out ---------------------------------------------------

def loo_data(seed=0):
    rng = np.random.default_rng(seed)
    pids = np.repeat(np.arange(40), 3).astype(str)
    X = rng.normal(size=(120, 3))
    y = (rng.random(120) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
    return X, y, pids


def test_loo_duplicate_patient():
    X, y, pids = loo_data()
    copy = pids == "0"
    X2 = np.vstack([X, X[copy]])
    y2 = np.concatenate([y, y[copy]])
    p2 = np.concatenate([pids, np.full(copy.sum(), "zz_copy")])
    pert = loo_patient_perturbation(X2, y2, p2, C=0.5, class_weighting="none", keep_coefs=True)
    base = fit_l1_logistic(X, y, C=0.5, tol=1e-8).coef
    k = list(pert.patient_ids).index("zz_copy")
    assert np.abs(pert.coefs[k] - base).sum() <= 1e-6
    assert np.all(pert.distance >= 0)


def test_loo_sole_signal_patient():
    X, y, pids = loo_data(1)
    X = np.column_stack([X, np.zeros(len(y))])
    carrier = pids == "5"
    y[carrier] = 1.0
    X[carrier, 3] = 3.0
    pert = loo_patient_perturbation(X, y, pids, C=0.5, class_weighting="none", keep_coefs=True)
    assert pert.full_coef[3] > 0
    k = list(pert.patient_ids).index("5")
    assert pert.coefs[k, 3] == 0.0
    assert pert.distance[k] >= abs(pert.full_coef[3]) - 1e-9
    assert pert.n_samples[k] == 3


# -- permutation and diagnosis method --------------------------------------

@given(st.lists(st.booleans(), min_size=1, max_size=100), st.integers(0, 1000))
def test_permute_labels(ys, seed):
    y = np.array(ys, dtype=float)
    a = permute_labels(y, seed)
    assert a.sum() == y.sum()
    np.testing.assert_array_equal(a, permute_labels(y, seed))


def test_error_by_method():
    e = np.array([0.9, 0.5, 0.2, 0.7, 0.1])
    out = error_by_diagnosis_method(e, [1, 1, 1, 1, 1], [1, 1, 1, 1, 1])
    assert out["code_only"].n == 0 and out["scr_only"].n == 0
    assert out["code_and_scr"].counts.sum() == 5 and len(out["code_and_scr"].counts) == 1000
    code, scr = [1, 1, 0, 0, 1], [1, 0, 1, 1, 1]
    out = error_by_diagnosis_method(e, code, scr)
    assert out["code_and_scr"].mean == pytest.approx((0.9 + 0.1) / 2)
    assert out["code_only"].mean == pytest.approx(0.5)
    assert out["scr_only"].mean == pytest.approx((0.2 + 0.7) / 2)
    assert sum(g.counts.sum() for g in out.values()) == 5
