"""Platt scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .logistic import sigmoid

EPS = 1e-12


class CalibrationError(ValueError):
    pass


@dataclass
class PlattCalibrator:
    a: float
    b: float

    def __call__(self, scores) -> np.ndarray:
        p = sigmoid(self.a * np.asarray(scores, dtype=float) + self.b)
        return np.clip(p, EPS, 1.0 - EPS)

    calibrate = __call__


def fit_platt(scores, labels, max_iter: int = 100, tol: float = 1e-12) -> PlattCalibrator:
    """Fit p = sigmoid(a*s + b) to held-out scores with Platt's smoothed targets.

    Targets are (N+ + 1)/(N+ + 2) for positives and 1/(N- + 2) for negatives;
    the fit is Newton's method with backtracking on the cross-entropy.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise CalibrationError(
            "calibration set contains a single class; use a larger calibration split")
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, float(np.log((n_pos + 1.0) / (n_neg + 1.0)))

    def objective(a, b):
        z = a * s + b
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    f = objective(a, b)
    for _ in range(max_iter):
        p = sigmoid(a * s + b)
        d = p - t
        ga, gb = float(d @ s), float(d.sum())
        v = p * (1 - p)
        haa = float(v @ (s * s)) + 1e-12
        hab = float(v @ s)
        hbb = float(v.sum()) + 1e-12
        det = haa * hbb - hab * hab
        da = -(hbb * ga - hab * gb) / det
        db = -(-hab * ga + haa * gb) / det
        step = 1.0
        while step > 1e-10:
            na, nb = a + step * da, b + step * db
            fn = objective(na, nb)
            if fn <= f + 1e-4 * step * (ga * da + gb * db):
                break
            step *= 0.5
        else:
            break
        a, b, f = na, nb, fn
        if max(abs(step * da), abs(step * db)) < tol:
            break
    return PlattCalibrator(a, b)
