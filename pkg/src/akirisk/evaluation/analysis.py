"""Post-hoc analyses of cross-validated predictions: patient-level calibration,
error regression, utilization bins, leave-one-patient-out coefficient
perturbation, label permutation and error by diagnosis method."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..featurize import FeatureMatrix
from ..learners import fit_l1_least_squares, fit_l1_logistic
from .compare import bootstrap_ci
from .cv import fold_plans
from .metrics import CalibrationCurve, calibration_curve

log = logging.getLogger(__name__)


def macro_predictions(predictions: np.ndarray) -> np.ndarray:
    """Per-sample mean over iterations of an (iterations, n) prediction array."""
    return np.nanmean(np.atleast_2d(predictions), axis=0)


def permute_labels(labels, seed) -> np.ndarray:
    """Uniformly random permutation of the labels (prevalence is unchanged)."""
    y = np.asarray(labels)
    return y[np.random.default_rng(seed).permutation(len(y))]


# ---------------------------------------------------------------------------
# patient level


@dataclass
class PatientLevel:
    patient_ids: np.ndarray
    predicted: np.ndarray    # mean predicted risk over the patient's samples
    observed: np.ndarray     # fraction of the patient's samples with AKI
    n_samples: np.ndarray
    curve: CalibrationCurve  # patients with observed risk exactly 0 or 1 only


def patient_level(sample_predictions, labels, patient_ids) -> PatientLevel:
    p = np.asarray(sample_predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    uniq, inv = np.unique(np.asarray(patient_ids), return_inverse=True)
    n = np.bincount(inv)
    pred = np.bincount(inv, weights=p) / n
    obs = np.bincount(inv, weights=y) / n
    pure = (obs == 0.0) | (obs == 1.0)
    return PatientLevel(uniq, pred, obs, n, calibration_curve(pred[pure], obs[pure]))


# ---------------------------------------------------------------------------
# error regression

ERROR_FEATURE_SETS = ("diagnoses", "race", "gender", "age")
# penalties per (stratum, feature set); anything not listed is unpenalised
DEFAULT_ERROR_ALPHA = {("cases", "diagnoses"): 0.015, ("controls", "diagnoses"): 1e-5}


def error_feature_columns(names: Sequence[str], feature_set: str) -> list[str]:
    prefix = {"diagnoses": "sum.count.DX.", "race": "first.race.", "gender": "last.gender."}
    if feature_set == "age":
        return [n for n in names if n == "max.age"]
    if feature_set not in prefix:
        raise ValueError(f"unknown feature set {feature_set!r}; expected one of {ERROR_FEATURE_SETS}")
    return [n for n in names if n.startswith(prefix[feature_set])]


@dataclass
class ErrorRegression:
    stratum: str
    feature_set: str
    alpha: float
    names: list[str]
    fold_coefs: np.ndarray        # (folds, p)
    fold_intercepts: np.ndarray
    coef: np.ndarray              # mean over folds
    ci_low: np.ndarray
    ci_high: np.ndarray
    test_mse: float

    def rows(self):
        """(feature, mean coef, CI low, CI high, fraction of folds nonzero) for nonzero features."""
        nz = (self.fold_coefs != 0).mean(axis=0)
        for j, name in enumerate(self.names):
            if self.coef[j] != 0:
                yield name, float(self.coef[j]), float(self.ci_low[j]), float(self.ci_high[j]), float(nz[j])


def error_regression(errors, X, names: Sequence[str], patient_ids, alpha: float,
                     iterations: int = 50, k: int = 5, seed: int = 0,
                     stratum: str = "", feature_set: str = "",
                     bootstrap_iterations: int = 10_000) -> ErrorRegression:
    """Lasso of |error| on X refit on the training folds of iterated grouped CV.

    Coefficients are summarised by their mean over folds with a percentile
    bootstrap CI of that mean. Missing feature values count as 0.
    """
    e = np.asarray(errors, dtype=float)
    if e.size and (e.min() < 0 or e.max() > 1):
        raise ValueError("absolute errors must lie in [0, 1]")
    X = np.nan_to_num(np.asarray(X, dtype=float))
    pids = np.asarray(patient_ids)
    p = X.shape[1]
    coefs, intercepts, sq, cnt = [], [], 0.0, 0
    for plan in fold_plans(list(pids), iterations, k, seed):
        test = np.isin(pids, plan.test_patients)
        fit = fit_l1_least_squares(X[~test], e[~test], alpha)
        coefs.append(fit.coef)
        intercepts.append(fit.intercept)
        resid = e[test] - X[test] @ fit.coef - fit.intercept
        sq += float(resid @ resid)
        cnt += int(test.sum())
    coefs = np.array(coefs).reshape(-1, p)
    lo, hi = np.empty(p), np.empty(p)
    for j in range(p):
        lo[j], hi[j] = bootstrap_ci(coefs[:, j], bootstrap_iterations, seed=[seed, j]) \
            if len(coefs) > 1 else (coefs[0, j], coefs[0, j])
    return ErrorRegression(stratum, feature_set, alpha, list(names), coefs, np.array(intercepts),
                           coefs.mean(axis=0), lo, hi, sq / max(cnt, 1))


def error_analysis(sample_predictions, labels, matrix: FeatureMatrix, patient_ids,
                   strata: Sequence[str] = ("cases", "controls"),
                   feature_sets: Sequence[str] = ERROR_FEATURE_SETS,
                   alpha: Mapping[tuple[str, str], float] | None = None,
                   iterations: int = 50, k: int = 5, seed: int = 0,
                   bootstrap_iterations: int = 10_000) -> list[ErrorRegression]:
    """Error regressions for every (stratum, feature set) with enough patients."""
    alpha = DEFAULT_ERROR_ALPHA if alpha is None else alpha
    y = np.asarray(labels, dtype=float)
    err = np.abs(np.asarray(sample_predictions, dtype=float) - y)
    pids = np.asarray(patient_ids)
    out = []
    for stratum in strata:
        mask = y == (1.0 if stratum == "cases" else 0.0)
        if len(np.unique(pids[mask])) < k:
            log.warning("stratum %s has fewer than %d patients; skipped", stratum, k)
            continue
        for fs in feature_sets:
            cols = error_feature_columns(matrix.names, fs)
            if not cols:
                log.warning("no %s features in the matrix; skipped", fs)
                continue
            X = matrix.select(cols).X[mask]
            out.append(error_regression(err[mask], X, cols, pids[mask],
                                        alpha.get((stratum, fs), 0.0), iterations, k, seed,
                                        stratum, fs, bootstrap_iterations))
    return out


# ---------------------------------------------------------------------------
# utilization


@dataclass
class UtilizationBin:
    hospitalizations: int
    outcome: str             # "case" or "control"
    n_samples: int
    n_patients: int
    mean_abs_error: float
    sd_abs_error: float
    mean_prediction_sd: float


@dataclass
class UtilizationReport:
    bins: list[UtilizationBin]
    notes: list[str] = field(default_factory=list)


def utilization_analysis(predictions: np.ndarray, labels, patient_ids,
                         hospitalization_counts: Mapping[str, int] | None = None,
                         bins: Sequence[int] | None = None) -> UtilizationReport:
    """Absolute error and across-iteration prediction sd binned by patient utilization.

    ``predictions`` is (iterations, n). A patient's utilization defaults to
    its sample count + 1 (every sample is a rehospitalization).
    """
    P = np.atleast_2d(np.asarray(predictions, dtype=float))
    y = np.asarray(labels, dtype=float)
    pids = np.asarray(patient_ids)
    if hospitalization_counts is None:
        uniq, cnt = np.unique(pids, return_counts=True)
        hospitalization_counts = dict(zip(uniq.tolist(), (cnt + 1).tolist()))
    util = np.array([hospitalization_counts[p] for p in pids])
    abs_err = np.abs(macro_predictions(P) - y)
    # exact zero for constant replicates (nanstd leaves rounding residue)
    pred_sd = np.where(np.nanmax(P, axis=0) == np.nanmin(P, axis=0), 0.0, np.nanstd(P, axis=0))
    wanted = sorted(set(util.tolist())) if bins is None else list(bins)
    report = UtilizationReport([])
    for u in wanted:
        for outcome, val in (("case", 1.0), ("control", 0.0)):
            m = (util == u) & (y == val)
            if not m.any():
                report.notes.append(f"bin hospitalizations={u} outcome={outcome} is empty; omitted")
                continue
            report.bins.append(UtilizationBin(
                int(u), outcome, int(m.sum()), len(set(pids[m].tolist())),
                float(abs_err[m].mean()), float(abs_err[m].std()), float(pred_sd[m].mean())))
    return report


# ---------------------------------------------------------------------------
# leave one patient out


@dataclass
class Perturbation:
    patient_ids: np.ndarray
    distance: np.ndarray          # ||beta_full - beta_without_patient||_1
    n_samples: np.ndarray
    full_coef: np.ndarray
    coefs: np.ndarray | None = None


def loo_patient_perturbation(X, y, patient_ids, C: float = 2e-4,
                             class_weighting: str = "balanced", keep_coefs: bool = False,
                             tol: float = 1e-8) -> Perturbation:
    """Refit an L1 logistic model once per patient with that patient's samples removed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    pids = np.asarray(patient_ids)
    full = fit_l1_logistic(X, y, C=C, class_weighting=class_weighting, tol=tol).coef
    uniq, counts = np.unique(pids, return_counts=True)
    dist = np.empty(len(uniq))
    coefs = np.empty((len(uniq), X.shape[1])) if keep_coefs else None
    for i, p in enumerate(uniq):
        keep = pids != p
        beta = fit_l1_logistic(X[keep], y[keep], C=C, class_weighting=class_weighting, tol=tol).coef
        dist[i] = np.abs(full - beta).sum()
        if keep_coefs:
            coefs[i] = beta
    return Perturbation(uniq, dist, counts, full, coefs)


# ---------------------------------------------------------------------------
# error by diagnosis method

METHOD_GROUPS = ("code_and_scr", "code_only", "scr_only")


@dataclass
class MethodErrors:
    group: str
    n: int
    mean: float
    counts: np.ndarray
    edges: np.ndarray


def error_by_diagnosis_method(errors, by_code, by_scr, n_bins: int = 1000) -> dict[str, MethodErrors]:
    """Histograms over [0, 1] of the errors of AKI cases split by how AKI was found."""
    e = np.asarray(errors, dtype=float)
    c = np.asarray(by_code, dtype=bool)
    s = np.asarray(by_scr, dtype=bool)
    masks = {"code_and_scr": c & s, "code_only": c & ~s, "scr_only": ~c & s}
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    out = {}
    for g in METHOD_GROUPS:
        v = e[masks[g]]
        counts, _ = np.histogram(v, bins=edges)
        out[g] = MethodErrors(g, int(v.size), float(v.mean()) if v.size else float("nan"), counts, edges)
    return out
