"""Acceptance criteria 1-11; each test prints one PASS/FAIL line."""
import math
import time
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from scipy import integrate, stats

from akirisk.evaluation import (brier, calibration_curve, correlated_ttest, micro_macro, roc_auc,
                                run_cv, summarize)
from akirisk.evaluation.metrics import METRICS
from akirisk.learners import fit_gbc, fit_l1_logistic, fit_platt, gini_importance, patient_weights
from akirisk.learners.logistic import class_multipliers
from akirisk.learners.weighting import patient_weights_exact
from akirisk.labeling import aki_by_scr, aki_by_scr_bruteforce
from akirisk.synthgen import PLANTED_FEATURES
from akirisk.systems import _fit_design, fit_system, get_system, input_columns

from conftest import build_cohort


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


# ---------------------------------------------------------------------------
# 1. creatinine rule against the all-pairs oracle

def random_series(rng, quantized: bool):
    n = int(rng.integers(0, 51))
    span = rng.uniform(0, 30 * 24)
    t = np.sort(rng.uniform(0, span, size=n))
    v = rng.uniform(0.3, 8.0, size=n)
    if quantized:  # land on the 0.3 mg/dL, 1.5x, 48 h and 168 h boundaries often
        t = np.sort(np.round(t / 12.0) * 12.0)
        v = np.round(v * 10.0) / 10.0
    return list(zip(t.tolist(), v.tolist()))


def test_criterion_01_kdigo_matches_bruteforce(verdict):
    rng = np.random.default_rng(2024)
    series = [random_series(rng, quantized=k % 2 == 1) for k in range(10_000)]
    t0 = time.perf_counter()
    fast = [aki_by_scr(s) for s in series]
    t_fast = time.perf_counter() - t0
    slow = [aki_by_scr_bruteforce(s) for s in series]
    t_total = time.perf_counter() - t0
    mismatches = sum(a != b for a, b in zip(fast, slow))
    verdict(1, mismatches == 0 and t_total < 10.0,
            f"{mismatches} mismatches over 10,000 series ({sum(slow)} positive); "
            f"labeler {t_fast:.2f} s, with oracle {t_total:.2f} s")


# ---------------------------------------------------------------------------
# 2. leakage and coverage over a full 50 x 5 run

def test_criterion_02_grouped_cv_leakage(small_cohort, verdict):
    c = small_cohort
    rep = run_cv(c.matrix, c.y, c.pids, get_system("CLR"), iterations=50, k=5, seed=0)
    overlaps = 0
    for it in range(50):
        for f in range(5):
            test = rep.fold_of[it] == f
            overlaps += len(set(c.pids[test]) & set(c.pids[~test]))
    scored = (~np.isnan(rep.predictions)).sum(axis=0)
    ok = (overlaps == 0 and np.all(scored == 50) and len(rep.records) == 250
          and all(rep.invariants.values()))
    verdict(2, ok, f"{len(rep.records)} folds, {overlaps} patient overlaps, "
                   f"scores per sample min {scored.min()} max {scored.max()}")


# ---------------------------------------------------------------------------
# 3. L1 optimality conditions with finite-difference gradients

def test_criterion_03_kkt_audit(verdict):
    worst = 0.0
    n_zero = n_nonzero = 0
    for k in range(20):
        rng = np.random.default_rng([3, k])
        X = rng.normal(size=(200, 20))
        eta = X[:, :4] @ rng.normal(0, 1.0, 4) - 1.0
        y = (rng.random(200) < 1 / (1 + np.exp(-eta))).astype(float)
        w = rng.uniform(0.5, 2.0, 200)
        C = float(rng.choice([0.02, 0.05, 0.1]))
        cw = "balanced" if k % 2 else "none"
        fit = fit_l1_logistic(X, y, w, C=C, class_weighting=cw)
        ww = w * class_multipliers(y.astype(int), cw)

        def loss(beta):
            z = X @ beta + fit.intercept
            return np.sum(ww * (np.logaddexp(0.0, z) - y * z))

        h = 1e-5
        g = np.array([(loss(fit.coef + h * e) - loss(fit.coef - h * e)) / (2 * h) for e in np.eye(20)])
        zero = fit.coef == 0
        viol_zero = np.maximum(np.abs(g[zero]) - 1 / C, 0.0)
        viol_nz = np.abs(g[~zero] + np.sign(fit.coef[~zero]) / C)
        worst = max(worst, viol_zero.max(initial=0.0), viol_nz.max(initial=0.0))
        n_zero += int(zero.sum())
        n_nonzero += int((~zero).sum())
    verdict(3, worst <= 1e-4 and n_zero > 0 and n_nonzero > 0,
            f"20 problems, {n_zero} zero / {n_nonzero} nonzero coefficients, "
            f"worst violation {worst:.2e}")


# ---------------------------------------------------------------------------
# 4. boosted trees are invariant to monotone feature transforms

def test_criterion_04_gbc_monotone_invariance(small_cohort, verdict):
    c = small_cohort
    system = get_system("GBC")
    _, X = _fit_design(system, "gbt", c.matrix, input_columns(system, c.matrix),
                       np.arange(len(c.y)), None)
    cfg = system.gbc
    base = fit_gbc(X, c.y, config=cfg).predict_proba(X)
    cols = [j for j in range(X.shape[1]) if X[:, j].min() > -1.0]
    worst = 0.0
    for j in cols:
        Xt = X.copy()
        Xt[:, j] = np.log1p(Xt[:, j])
        worst = max(worst, float(np.max(np.abs(fit_gbc(Xt, c.y, config=cfg).predict_proba(Xt) - base))))
    verdict(4, worst <= 1e-12 and len(cols) == X.shape[1],
            f"{len(cols)} of {X.shape[1]} features transformed, max change {worst:.1e}")


# ---------------------------------------------------------------------------
# 5. metric oracles

def test_criterion_05_metric_oracles(verdict):
    rng = np.random.default_rng(5)
    worst_roc = worst_brier = 0.0
    recon_ok = True
    for n in (2, 10, 57, 200, 500):
        s = rng.random(n).round(2)
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        pos, neg = s[y == 1], s[y == 0]
        conc = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in product(pos, neg)) / (len(pos) * len(neg))
        worst_roc = max(worst_roc, abs(roc_auc(s, y) - conc))
        for cst in (0.0, 0.06, 0.5, 1.0):
            pi = y.mean()
            worst_brier = max(worst_brier, abs(brier(np.full(n, cst), y) - (cst ** 2 * (1 - pi) + (1 - cst) ** 2 * pi)))
        cur = calibration_curve(s, y)
        ok = cur.count > 0
        recon_ok &= int(round(float((cur.count[ok] * cur.observed[ok]).sum()))) == int(y.sum())
        recon_ok &= int(cur.count.sum()) == n
    verdict(5, worst_roc <= 1e-12 and worst_brier <= 1e-12 and recon_ok,
            f"ROC vs concordance {worst_roc:.1e}, Brier closed form {worst_brier:.1e}, "
            f"calibration reconstruction {'exact' if recon_ok else 'wrong'}")


# ---------------------------------------------------------------------------
# 6 and 10. planted-signal run at 5,000 patients

@pytest.fixture(scope="module")
def planted_run():
    t0 = time.perf_counter()
    cohort = build_cohort(5000, seed=1, min_support=100, prevalence=0.062)
    report = run_cv(cohort.matrix, cohort.y, cohort.pids, get_system("GBC"),
                    iterations=10, k=5, seed=0)
    rlr1 = fit_system(get_system("RLR1"), cohort.matrix, cohort.y, cohort.pids, seed=[0, 0])
    return cohort, report, rlr1, time.perf_counter() - t0


def test_criterion_06_planted_signal(planted_run, verdict):
    cohort, report, rlr1, elapsed = planted_run
    summary = summarize(report)
    auc = summary["metrics"]["roc_auc"]["micro_mean"]
    names = rlr1.feature_names
    freq = {f: float(rlr1.stability_frequency[names.index(f)]) for f in PLANTED_FEATURES.values()}
    gini = report.fold_weights.mean(axis=0)
    top = report.feature_names[int(np.argmax(gini))]
    ok = (auc >= 0.80 and min(freq.values()) >= 0.9 and top in PLANTED_FEATURES.values()
          and elapsed <= 15 * 60)
    verdict(6, ok, f"micro ROC AUC {auc:.4f}; planted stability {freq}; top Gini feature {top}; "
                   f"{elapsed / 60:.1f} min")


def test_criterion_10_macro_sd_below_micro_sd(planted_run, verdict):
    _, report, _, _ = planted_run
    rows = {m: micro_macro(report.records, m) for m in METRICS}
    ok = all(r["macro_sd"] < r["micro_sd"] for r in rows.values())
    verdict(10, ok, "; ".join(f"{m} micro sd {r['micro_sd']:.5f} macro sd {r['macro_sd']:.5f}"
                              for m, r in rows.items()))


# ---------------------------------------------------------------------------
# 7. permuted labels

def test_criterion_07_permutation_control(planted_run, verdict):
    cohort, _, _, _ = planted_run
    rep = run_cv(cohort.matrix, cohort.y, cohort.pids, get_system("NGBC"), iterations=2, k=5, seed=0)
    auc = micro_macro(rep.records, "roc_auc")["micro_mean"]
    prev = cohort.y.mean()
    spread = float(np.sqrt(np.mean((rep.predictions - prev) ** 2)))
    verdict(7, 0.45 <= auc <= 0.55 and spread < 0.02,
            f"micro ROC AUC {auc:.4f}; prediction rms around prevalence {prev:.4f} is {spread:.4f}")


# ---------------------------------------------------------------------------
# 8. correlated t-test

def test_criterion_08_correlated_ttest(verdict):
    rope = 0.01
    zero = correlated_ttest(np.zeros(250), rope).as_tuple()
    rng = np.random.default_rng(8)
    d = 0.007 + 0.006 * rng.standard_normal(250)
    shifted = correlated_ttest(d - d.mean() + 10 * rope, rope)
    got = np.array(correlated_ttest(d, rope, 0.2).as_tuple())
    n, loc, s2 = len(d), d.mean(), d.var(ddof=1)
    scale = math.sqrt((1 / n + 0.2 / 0.8) * s2)
    pdf = lambda x: stats.t.pdf((x - loc) / scale, n - 1) / scale
    q = lambda a, b: integrate.quad(pdf, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    ref = np.array([q(rope / 2, np.inf), q(-rope / 2, rope / 2), q(-np.inf, -rope / 2)])
    err = float(np.max(np.abs(got - ref)))
    ok = zero == (0.0, 1.0, 0.0) and shifted.p_higher >= 0.999 and err <= 1e-6
    verdict(8, ok, f"zero input {zero}; +10 rope p_higher {shifted.p_higher:.6f}; "
                   f"quadrature error {err:.1e}")


# ---------------------------------------------------------------------------
# 9. calibration

def test_criterion_09_calibration(verdict):
    rng = np.random.default_rng(9)
    p = rng.random(50_000)
    y = (rng.random(p.size) < p).astype(float)
    cur = calibration_curve(p, y)
    dev = float(np.nanmax(np.abs(cur.observed - cur.mean_predicted)))
    cal = fit_platt(np.log(np.clip(p, 1e-9, 1) / np.clip(1 - p, 1e-9, 1)), y)
    grid = cal(np.linspace(-20, 20, 2001))
    monotone = cal.a > 0 and bool(np.all(np.diff(grid) >= 0))
    verdict(9, dev <= 0.05 and monotone,
            f"max bin deviation {dev:.4f}; Platt a={cal.a:.4f} b={cal.b:.4f} monotone={monotone}")


# ---------------------------------------------------------------------------
# 11. patient weights

def test_criterion_11_weighting_identity(small_cohort, verdict):
    pids = list(small_cohort.pids)
    exact = patient_weights_exact(pids)
    per = {}
    for p, w in zip(pids, exact):
        per[p] = per.get(p, Fraction(0)) + w
    float_total = float(patient_weights(pids).sum())
    three = next(p for p in per if pids.count(p) == 3)
    ok = (all(v == 1 for v in per.values()) and sum(exact) == len(per)
          and abs(float_total - len(per)) < 1e-9
          and all(w == Fraction(1, 3) for p, w in zip(pids, exact) if p == three))
    verdict(11, ok, f"{len(pids)} samples, {len(per)} patients, exact total {sum(exact)}, "
                    f"float total {float_total:.12f}")
