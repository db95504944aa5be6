"""Repeated-measures handling: per-patient weights and one-sample-per-patient draws."""
from __future__ import annotations

from collections import Counter
from fractions import Fraction
from typing import Sequence

import numpy as np


def patient_weights(patient_ids: Sequence[str]) -> np.ndarray:
    """1 / (samples from that patient); each patient's weights sum to 1."""
    counts = Counter(patient_ids)
    return np.array([1.0 / counts[p] for p in patient_ids])


def patient_weights_exact(patient_ids: Sequence[str]) -> list[Fraction]:
    counts = Counter(patient_ids)
    return [Fraction(1, counts[p]) for p in patient_ids]


def sample_one_per_patient(patient_ids: Sequence[str], seed) -> np.ndarray:
    """Indices of one uniformly chosen sample per patient, in patient order."""
    rng = np.random.default_rng(seed)
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(patient_ids):
        groups.setdefault(p, []).append(i)
    return np.array([idx[rng.integers(len(idx))] for _, idx in sorted(groups.items())],
                    dtype=np.int64)
