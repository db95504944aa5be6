"""Discrimination and calibration metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

LOG_LOSS_EPS = 1e-15
N_BINS = 10


class UndefinedMetric(ValueError):
    """ROC/PR area requested on single-class labels."""


def _check_two_classes(labels: np.ndarray) -> None:
    if labels.size == 0 or labels.min() == labels.max():
        raise UndefinedMetric("metric needs at least one positive and one negative")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate P(score+ > score-), ties counted one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    _check_two_classes(y)
    ranks = rankdata(s)  # average ranks for ties
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve (average precision)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    _check_two_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # one PR point per distinct threshold
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def brier(probs, labels) -> float:
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    return float(np.mean((p - y) ** 2))


def log_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=float), LOG_LOSS_EPS, 1 - LOG_LOSS_EPS)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class CalibrationCurve:
    edges: np.ndarray          # 11 bin edges over [0, 1]
    mean_predicted: np.ndarray  # NaN for empty bins
    observed: np.ndarray        # event fraction, NaN for empty bins
    count: np.ndarray

    def rows(self):
        for k in range(len(self.count)):
            yield (float(self.edges[k]), float(self.edges[k + 1]), int(self.count[k]),
                   float(self.mean_predicted[k]), float(self.observed[k]))


def bin_index(probs, n_bins: int = N_BINS) -> np.ndarray:
    """Bins [0, .1), [.1, .2), ..., [.9, 1.0]; the top edge belongs to the last bin."""
    p = np.asarray(probs, dtype=float)
    return np.minimum((p * n_bins).astype(np.int64), n_bins - 1)


def calibration_curve(probs, labels, n_bins: int = N_BINS) -> CalibrationCurve:
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    idx = bin_index(p, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    psum = np.bincount(idx, weights=p, minlength=n_bins)
    ysum = np.bincount(idx, weights=y, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_pred = np.where(count > 0, psum / np.maximum(count, 1), np.nan)
        observed = np.where(count > 0, ysum / np.maximum(count, 1), np.nan)
    return CalibrationCurve(np.linspace(0.0, 1.0, n_bins + 1), mean_pred, observed, count)


METRICS = ("roc_auc", "pr_auc", "brier", "log_loss")


def all_metrics(probs, labels) -> dict[str, float]:
    """All four metrics; ROC/PR are NaN when the labels are single-class."""
    out = {}
    for name, fn in (("roc_auc", roc_auc), ("pr_auc", pr_auc)):
        try:
            out[name] = fn(probs, labels)
        except UndefinedMetric:
            out[name] = float("nan")
    out["brier"] = brier(probs, labels)
    out["log_loss"] = log_loss(probs, labels)
    return out
