"""AKI labels, cohort exclusions and rehospitalization training samples."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import LabelConfig
from .ehr import Hospitalization, PatientStore

DELTA_MGDL = 0.3
DELTA_WINDOW_H = 48.0
RATIO = 1.5
RATIO_WINDOW_H = 168.0


@dataclass(frozen=True)
class LabelRecord:
    admit_id: str
    by_code: bool
    by_scr: bool

    @property
    def aki(self) -> bool:
        return self.by_code or self.by_scr


@dataclass
class CohortView:
    stays: dict[str, list[Hospitalization]]  # eligible patients only (>= 2 stays)
    tallies: dict[str, int] = field(default_factory=dict)

    @property
    def patient_ids(self) -> list[str]:
        return list(self.stays)


@dataclass(frozen=True)
class TrainingSample:
    patient_id: str
    target_admit_id: str
    prior_admit_ids: tuple[str, ...]
    label: bool
    weight: float = 1.0


def aki_by_code(h: Hospitalization, aki_codes: Sequence[str] = LabelConfig.aki_codes) -> bool:
    """True if the stay carries one of the AKI diagnosis codes (full precision)."""
    wanted = set(aki_codes)
    return any(c.system == "ICD9_DX" and c.code in wanted for c in h.codes)


def aki_by_scr(series: Sequence[tuple[float, float]]) -> bool:
    """KDIGO creatinine criterion over one stay's time-sorted (hours, mg/dL) readings.

    Any earlier reading may serve as baseline: a rise of >= 0.3 mg/dL within
    48 h, or to >= 1.5x within 168 h, qualifies. Readings sharing a timestamp
    are never paired with each other. Runs in O(n) with two monotone deques
    holding the window minima.
    """
    n = len(series)
    for k in range(1, n):
        if series[k][0] < series[k - 1][0]:
            raise ValueError("sCr series must be sorted by time")
    short: deque = deque()  # (t, v) with increasing v
    long: deque = deque()
    i = 0
    while i < n:
        t_now = series[i][0]
        j = i
        while j < n and series[j][0] == t_now:
            j += 1
        # evict baselines that fell out of the windows for this timestamp
        while short and t_now - short[0][0] > DELTA_WINDOW_H:
            short.popleft()
        while long and t_now - long[0][0] > RATIO_WINDOW_H:
            long.popleft()
        for _, v in series[i:j]:
            if short and v - short[0][1] >= DELTA_MGDL:
                return True
            if long and v >= RATIO * long[0][1]:
                return True
        for t, v in series[i:j]:
            while short and short[-1][1] >= v:
                short.pop()
            short.append((t, v))
            while long and long[-1][1] >= v:
                long.pop()
            long.append((t, v))
        i = j
    return False


def aki_by_scr_bruteforce(series: Sequence[tuple[float, float]]) -> bool:
    """All-pairs reference for :func:`aki_by_scr`."""
    for a in range(len(series)):
        t0, v0 = series[a]
        for b in range(len(series)):
            t1, v1 = series[b]
            if not t0 < t1:
                continue
            if v1 - v0 >= DELTA_MGDL and t1 - t0 <= DELTA_WINDOW_H:
                return True
            if v1 >= RATIO * v0 and t1 - t0 <= RATIO_WINDOW_H:
                return True
    return False


def label_all(store: PatientStore, cfg: LabelConfig | None = None) -> dict[str, LabelRecord]:
    cfg = cfg or LabelConfig()
    out = {}
    for h in store.hospitalizations():
        out[h.admit_id] = LabelRecord(
            h.admit_id,
            by_code=aki_by_code(h, cfg.aki_codes),
            by_scr=aki_by_scr(h.lab_series(cfg.scr_test)),
        )
    return out


def _has_transplant(h: Hospitalization, prefixes: Sequence[str]) -> bool:
    return any(c.system == "ICD9_PX" and c.code.startswith(p) for c in h.codes for p in prefixes)


def select_cohort(store: PatientStore, labels: dict[str, LabelRecord] | None = None,
                  cfg: LabelConfig | None = None) -> CohortView:
    """Apply the age and post-ESRD exclusions; keep patients with >= 2 remaining stays.

    A stay is dropped when some earlier stay carried an ESRD code and no
    renal-transplant procedure occurred between that ESRD stay (inclusive) and
    the stay in question (exclusive). ESRD/transplant history is read from all
    stays, including ones dropped for age.
    """
    cfg = cfg or LabelConfig()
    esrd = set(cfg.esrd_codes)
    tallies = {"hospitalizations": 0, "under_age": 0, "post_esrd": 0,
               "single_stay_patients": 0, "eligible_patients": 0, "eligible_hospitalizations": 0}
    kept: dict[str, list[Hospitalization]] = {}
    for pid, stays in store.patients.items():
        remaining = []
        esrd_active = False
        for h in stays:
            tallies["hospitalizations"] += 1
            if h.age_at_admission < cfg.min_age:
                tallies["under_age"] += 1
            elif esrd_active:
                tallies["post_esrd"] += 1
            else:
                remaining.append(h)
            if _has_transplant(h, cfg.transplant_prefixes):
                esrd_active = False
            if any(c.system == "ICD9_DX" and c.code in esrd for c in h.codes):
                esrd_active = not _has_transplant(h, cfg.transplant_prefixes)
        if len(remaining) >= 2:
            kept[pid] = remaining
            tallies["eligible_patients"] += 1
            tallies["eligible_hospitalizations"] += len(remaining)
        elif remaining:
            tallies["single_stay_patients"] += 1
    return CohortView(stays=kept, tallies=tallies)


def build_samples(cohort: CohortView, labels: dict[str, LabelRecord]) -> list[TrainingSample]:
    samples = []
    for pid, stays in cohort.stays.items():
        for k in range(1, len(stays)):
            samples.append(TrainingSample(
                patient_id=pid,
                target_admit_id=stays[k].admit_id,
                prior_admit_ids=tuple(h.admit_id for h in stays[:k]),
                label=labels[stays[k].admit_id].aki,
            ))
    return samples


def diagnosis_crosstab(labels: dict[str, LabelRecord]) -> dict:
    """2x2 counts: rows code +/-, columns sCr +/-, with margins."""
    cells = [[0, 0], [0, 0]]
    for rec in labels.values():
        cells[0 if rec.by_code else 1][0 if rec.by_scr else 1] += 1
    return {
        "cells": cells,
        "row_totals": [sum(cells[0]), sum(cells[1])],
        "col_totals": [cells[0][0] + cells[1][0], cells[0][1] + cells[1][1]],
        "total": sum(map(sum, cells)),
    }


# ---------------------------------------------------------------------------
# files


def write_labels(labels: dict[str, LabelRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["admit_id", "by_code", "by_scr", "aki"])
        for aid in sorted(labels):
            r = labels[aid]
            w.writerow([aid, int(r.by_code), int(r.by_scr), int(r.aki)])


def read_labels(path: str | Path) -> dict[str, LabelRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["admit_id"]: LabelRecord(row["admit_id"], row["by_code"] == "1", row["by_scr"] == "1")
                for row in csv.DictReader(fh)}


def write_samples(samples: list[TrainingSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "patient_id", "target_admit_id", "prior_admit_ids", "label", "weight"])
        for i, s in enumerate(samples):
            w.writerow([i, s.patient_id, s.target_admit_id, "|".join(s.prior_admit_ids),
                        int(s.label), repr(s.weight)])


def read_samples(path: str | Path) -> list[TrainingSample]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [TrainingSample(row["patient_id"], row["target_admit_id"],
                               tuple(row["prior_admit_ids"].split("|")), row["label"] == "1",
                               float(row["weight"]))
                for row in csv.DictReader(fh)]
