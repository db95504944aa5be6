from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from akirisk.featurize import FeatureMatrix, featurize_samples, sparsity_filter
from akirisk.labeling import build_samples, label_all, select_cohort
from akirisk.synthgen import SynthConfig, SynthData, generate


@dataclass
class Cohort:
    data: SynthData
    store: object
    labels: dict
    samples: list
    matrix: FeatureMatrix
    y: np.ndarray
    pids: np.ndarray


def build_cohort(n_patients: int, seed: int, min_support: int = 20, **kw) -> Cohort:
    data = generate(SynthConfig(n_patients=n_patients, seed=seed, **kw))
    store = data.to_store()
    labels = label_all(store)
    samples = build_samples(select_cohort(store, labels), labels)
    full = featurize_samples(store.by_admit_id(), samples)
    matrix = full.select(sparsity_filter(full, min_support))
    y = np.array([s.label for s in samples], dtype=float)
    pids = np.array([s.patient_id for s in samples])
    return Cohort(data, store, labels, samples, matrix, y, pids)


@pytest.fixture(scope="session")
def small_cohort() -> Cohort:
    return build_cohort(400, seed=11)
