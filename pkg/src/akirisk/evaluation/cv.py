"""Iterated grouped k-fold cross-validation.

Seeds are position-derived: iteration ``i`` shuffles patients with
``default_rng([seed, i])`` and fold ``f`` of it fits with
``default_rng([seed, i, f, 1])``, so any fold can be re-run on its own and
results do not depend on scheduling.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import multiprocessing as mp
import numpy as np

from ..featurize import FeatureMatrix
from ..systems import SystemSpec, fit_system
from .metrics import METRICS, all_metrics, calibration_curve

log = logging.getLogger(__name__)


@dataclass
class FoldPlan:
    iteration: int
    fold: int
    train_patients: np.ndarray
    test_patients: np.ndarray


@dataclass
class MetricRecord:
    system: str
    iteration: int
    fold: int
    roc_auc: float
    pr_auc: float
    brier: float
    log_loss: float
    n_test: int = 0
    n_positive: int = 0

    @property
    def defined(self) -> bool:
        return not (math.isnan(self.roc_auc) or math.isnan(self.pr_auc))


@dataclass
class EvalReport:
    system: str
    iterations: int
    folds: int
    seed: int
    records: list[MetricRecord]
    predictions: np.ndarray          # (iterations, n_samples)
    fold_of: np.ndarray              # (iterations, n_samples) test fold index
    labels: np.ndarray
    patient_ids: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    fold_weights: np.ndarray | None = None  # (iterations*folds, n_features)
    invariants: dict[str, bool] = field(default_factory=dict)

    @property
    def undefined_folds(self) -> int:
        return sum(not r.defined for r in self.records)


def grouped_kfold(patient_ids: Sequence[str], k: int = 5, seed=0) -> list[np.ndarray]:
    """Shuffle distinct patients and cut them into k near-equal folds."""
    uniq = np.array(sorted(set(patient_ids)))
    if len(uniq) < k:
        raise ValueError(f"need at least {k} patients for {k}-fold CV, got {len(uniq)}")
    rng = np.random.default_rng(seed)
    return [np.sort(part) for part in np.array_split(uniq[rng.permutation(len(uniq))], k)]


def fold_plans(patient_ids: Sequence[str], iterations: int, k: int, seed: int) -> list[FoldPlan]:
    plans = []
    for it in range(iterations):
        folds = grouped_kfold(patient_ids, k, [seed, it])
        for f, test in enumerate(folds):
            train = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
            plans.append(FoldPlan(it, f, train, test))
    return plans


_SHARED: dict = {}


def _run_fold(plan: FoldPlan):
    matrix, y, pids, system, seed = (_SHARED[k] for k in ("matrix", "y", "pids", "system", "seed"))
    test = np.isin(pids, plan.test_patients)
    train_idx, test_idx = np.flatnonzero(~test), np.flatnonzero(test)
    model = fit_system(system, matrix.rows(train_idx), y[train_idx], pids[train_idx],
                       [seed, plan.iteration, plan.fold, 1])
    probs = model.predict_proba(matrix.rows(test_idx))
    return plan, test_idx, probs, model.feature_names, model.feature_weights()


def run_cv(matrix: FeatureMatrix, labels, patient_ids, system: SystemSpec, iterations: int = 50,
           k: int = 5, seed: int = 0, jobs: int | None = 1) -> EvalReport:
    """Score every sample once per iteration with models fit on the other patients."""
    y = np.asarray(labels, dtype=float)
    pids = np.asarray(patient_ids)
    n = len(y)
    plans = fold_plans(list(pids), iterations, k, seed)
    _SHARED.update(matrix=matrix, y=y, pids=pids, system=system, seed=seed)
    jobs = jobs or os.cpu_count() or 1
    try:
        if jobs > 1:
            with ProcessPoolExecutor(jobs, mp_context=mp.get_context("fork")) as ex:
                results = list(ex.map(_run_fold, plans))
        else:
            results = [_run_fold(p) for p in plans]
    finally:
        _SHARED.clear()

    preds = np.full((iterations, n), np.nan)
    fold_of = np.full((iterations, n), -1, dtype=np.int64)
    scored = np.zeros((iterations, n), dtype=np.int64)
    records, weights, names = [], [], []
    leakage_ok = True
    for plan, test_idx, probs, fnames, fw in results:
        leakage_ok &= not np.intersect1d(plan.train_patients, plan.test_patients).size
        preds[plan.iteration, test_idx] = probs
        fold_of[plan.iteration, test_idx] = plan.fold
        scored[plan.iteration, test_idx] += 1
        m = all_metrics(probs, y[test_idx])
        rec = MetricRecord(system.name, plan.iteration, plan.fold, m["roc_auc"], m["pr_auc"],
                           m["brier"], m["log_loss"], len(test_idx), int(y[test_idx].sum()))
        if not rec.defined:
            log.warning("iteration %d fold %d: single-class test set, ROC/PR undefined",
                        plan.iteration, plan.fold)
        records.append(rec)
        weights.append(fw)
        names = fnames
    report = EvalReport(system.name, iterations, k, seed, records, preds, fold_of, y, pids,
                        list(names), np.vstack(weights) if weights else None)
    report.invariants = {
        "no_patient_leakage": bool(leakage_ok),
        "each_sample_scored_once_per_iteration": bool(np.all(scored == 1)),
        "folds_partition_patients": _partition_ok(plans, pids, iterations, k),
    }
    return report


def _partition_ok(plans: list[FoldPlan], pids: np.ndarray, iterations: int, k: int) -> bool:
    everyone = set(pids.tolist())
    for it in range(iterations):
        tests = [set(p.test_patients.tolist()) for p in plans if p.iteration == it]
        if len(tests) != k or set().union(*tests) != everyone or sum(map(len, tests)) != len(everyone):
            return False
    return True


def _sd(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def micro_macro(records: Sequence[MetricRecord], metric: str) -> dict:
    """Micro: mean/sd over all fold records. Macro: mean/sd over per-iteration means.

    Records whose ROC/PR is undefined are left out of every metric and counted.
    """
    used = [r for r in records if r.defined]
    vals = np.array([getattr(r, metric) for r in used])
    by_iter: dict[int, list[float]] = {}
    for r in used:
        by_iter.setdefault(r.iteration, []).append(getattr(r, metric))
    iter_means = np.array([np.mean(v) for _, v in sorted(by_iter.items())])
    return {
        "metric": metric,
        "micro_mean": float(vals.mean()) if vals.size else float("nan"),
        "micro_sd": _sd(vals),
        "macro_mean": float(iter_means.mean()) if iter_means.size else float("nan"),
        "macro_sd": _sd(iter_means),
        "n_records": len(used),
        "n_undefined": len(records) - len(used),
    }


def summarize(report: EvalReport) -> dict:
    summary = {m: micro_macro(report.records, m) for m in METRICS}
    flat = report.predictions.ravel()
    ok = ~np.isnan(flat)
    curve = calibration_curve(flat[ok], np.tile(report.labels, report.iterations)[ok])
    return {
        "system": report.system,
        "iterations": report.iterations,
        "folds": report.folds,
        "seed": report.seed,
        "n_samples": int(len(report.labels)),
        "n_patients": int(len(set(report.patient_ids.tolist()))),
        "prevalence": float(report.labels.mean()),
        "metrics": summary,
        "undefined_folds": report.undefined_folds,
        "invariants": report.invariants,
        "calibration_curve": [
            {"lo": lo, "hi": hi, "count": c, "mean_predicted": mp_, "observed": ob}
            for lo, hi, c, mp_, ob in curve.rows()
        ],
    }
