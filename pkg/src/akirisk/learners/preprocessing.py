"""Most-frequent imputation and standard scaling, fit on training rows only."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..config import ConfigError


@dataclass
class MostFrequentImputer:
    fill: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.fill[cols]
        return X


def fit_impute_most_frequent(X: np.ndarray, names: Sequence[str] | None = None) -> MostFrequentImputer:
    """Per-column training mode; ties go to the smallest value."""
    X = np.asarray(X, dtype=float)
    fill = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            label = names[j] if names is not None else f"column {j}"
            raise ConfigError(f"feature {label!r} has no observed training values; cannot impute")
        values, counts = np.unique(col, return_counts=True)
        fill[j] = values[np.argmax(counts)]  # np.unique sorts, argmax takes the first maximum
    return MostFrequentImputer(fill)


@dataclass
class StandardScaler:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


def fit_standard_scale(X: np.ndarray) -> StandardScaler:
    """Centre by training mean, divide by training sd (zero-sd columns only centred)."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return StandardScaler(mean, sd)
