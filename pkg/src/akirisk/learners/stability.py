"""Stability selection with randomised L1 logistic regression."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .logistic import LinearFit, fit_l1_logistic


class SelectionError(ValueError):
    pass


@dataclass
class StabilityReport:
    frequency: np.ndarray
    threshold: float
    resamples: int

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.frequency >= self.threshold)


def stability_select(X, y, C1: float, fraction: float = 0.75, resamples: int = 50,
                     threshold: float = 0.25, weakness: float = 0.5, seed: int = 0,
                     sample_weight=None, class_weighting: str = "balanced") -> StabilityReport:
    """Selection frequency of each feature over randomised subsample fits.

    Every resample draws ceil(fraction*n) rows without replacement and a
    per-feature weakening factor W_j ~ U[weakness, 1]; the penalty on feature j
    becomes (1/C1)/W_j. Resample r uses the generator seeded by (seed, r).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    m = math.ceil(fraction * n)
    counts = np.zeros(p)
    for r in range(resamples):
        rng = np.random.default_rng([seed, r])
        rows = np.sort(rng.choice(n, size=m, replace=False))
        W = rng.uniform(weakness, 1.0, size=p)
        sw = None if sample_weight is None else np.asarray(sample_weight)[rows]
        fit = fit_l1_logistic(X[rows], y[rows], sw, C=C1, class_weighting=class_weighting,
                              penalty_factor=1.0 / W)
        counts += fit.coef != 0
    return StabilityReport(counts / resamples, threshold, resamples)


def fit_stability_logistic(X, y, C1: float, C2: float, fraction: float = 0.75,
                           resamples: int = 50, threshold: float = 0.25, seed: int = 0,
                           sample_weight=None, class_weighting: str = "balanced"
                           ) -> tuple[StabilityReport, LinearFit]:
    """Stability selection at C1, then an L1 fit at C2 on the selected features.

    The returned fit has coefficients for all columns (zero outside the
    selected set).
    """
    report = stability_select(X, y, C1, fraction, resamples, threshold, seed=seed,
                              sample_weight=sample_weight, class_weighting=class_weighting)
    sel = report.selected
    if sel.size == 0:
        raise SelectionError(f"no feature reached selection frequency {threshold}; "
                             "lower the threshold")
    fit = fit_l1_logistic(np.asarray(X)[:, sel], y, sample_weight, C=C2,
                          class_weighting=class_weighting)
    coef = np.zeros(np.asarray(X).shape[1])
    coef[sel] = fit.coef
    return report, LinearFit(coef, fit.intercept, fit.converged, fit.n_iter, fit.kkt_residual)
