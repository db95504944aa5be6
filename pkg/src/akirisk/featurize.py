"""Sequence aggregation of prior hospitalizations into fixed-length feature vectors.

Each stay is summarised by within-stay functions (F) into a flat row keyed by
``F.family`` (``max.UREA_NITROGEN``, ``count.DX.584``, ``age``); the sequence
of prior rows is then summarised by across-stay functions (G), giving names of
the form ``G.F.family`` (``mean.max.UREA_NITROGEN``, ``sum.count.DX.584``,
``max.age``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import ConfigError
from .ehr import Hospitalization
from .labeling import TrainingSample

LAB_STATS = ("min", "max", "mean", "var", "sum")
ACROSS_STATS = ("min", "mean", "max", "sum", "var")
NONPRESENT_FAMILIES = ("DX", "CPT4_PX", "DRG")
MODES = ("all", "medications", "clinical", "recent")
MED_PREFIXES = ("sum.count.MED.", "sum.count.MEDCLASS.", "sum.count.MEDSUBCLASS.")
# age, prior AKI, prior CKD, diabetes, heart failure (3-character ICD-9 keys)
CLINICAL_FEATURES = ("max.age", "sum.count.DX.584", "sum.count.DX.585",
                     "sum.count.DX.250", "sum.count.DX.428")

HospRow = dict[str, float]
FeatureVector = dict[str, float]


@dataclass(frozen=True)
class AggregatorSpec:
    """Assignment of within-stay (F) and across-stay (G) summaries per family."""

    lab_within: tuple[str, ...] = LAB_STATS
    lab_across: tuple[str, ...] = ACROSS_STATS
    flag_across: tuple[str, ...] = ACROSS_STATS
    first: tuple[str, ...] = ("race",)
    last: tuple[str, ...] = ("marital", "gender", "insurance")
    maximum: tuple[str, ...] = ("age",)

    def across_for(self, key: str) -> tuple[str, ...]:
        """G functions for a within-stay key; exactly one assignment per family."""
        family = key.split(".", 1)[0] if "." in key else key
        if family in self.maximum:
            return ("max",)
        if family in self.first:
            return ("first",)
        if family in self.last:
            return ("last",)
        if key.startswith("count.FLAG."):
            return self.flag_across
        if family in self.lab_within:
            return self.lab_across
        return ("sum",)


DEFAULT_SPEC = AggregatorSpec()


def key_kind(key: str, spec: AggregatorSpec = DEFAULT_SPEC) -> str:
    """'continuous' for lab statistics, age and length of stay; 'count' otherwise."""
    family = key.split(".", 1)[0] if "." in key else key
    if key in ("age", "length_of_stay") or family in spec.lab_within:
        return "continuous"
    return "count"


def feature_kind(name: str) -> str:
    """Kind of an aggregated feature name such as ``mean.max.UREA_NITROGEN``."""
    if name.startswith(("first.", "last.")) or name.startswith("sum.nonpresent."):
        return "count"
    head, _, rest = name.partition(".")
    if head in ACROSS_STATS and rest:
        return key_kind(rest)
    return key_kind(name)


def _sig(v: float) -> float:
    # 12 significant digits: summation-order residue would otherwise create
    # spurious distinct values that a monotone transform can merge again
    return float(f"{v:.12g}")


def _stats(values: Sequence[float], names: Iterable[str]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    mean = math.fsum(arr) / len(arr)
    out = {}
    for n in names:
        if n == "min":
            out[n] = float(arr.min())
        elif n == "max":
            out[n] = float(arr.max())
        elif n == "mean":
            out[n] = _sig(mean)
        elif n == "var":
            out[n] = _sig(math.fsum((arr - mean) ** 2) / len(arr))  # population variance
        elif n == "sum":
            out[n] = _sig(math.fsum(arr))
        else:
            raise ValueError(f"unknown statistic {n!r}")
    return out


def _bump(row: HospRow, key: str, by: float = 1.0) -> None:
    row[key] = row.get(key, 0.0) + by


def aggregate_within(h: Hospitalization, spec: AggregatorSpec = DEFAULT_SPEC) -> HospRow:
    """Summarise one stay (F). Labs absent from the stay are simply not emitted."""
    row: HospRow = {"age": float(h.age_at_admission), "length_of_stay": float(h.length_of_stay)}
    if h.race:
        row[f"race.{h.race.upper()}"] = 1.0
    if h.gender:
        row[f"gender.{h.gender.upper()}"] = 1.0
    if h.marital_status:
        row[f"marital.{h.marital_status.upper()}"] = 1.0
    for ins in h.insurances:
        row[f"insurance.{ins.upper()}"] = 1.0
    for loc in h.locations:
        _bump(row, f"count.LOCATION.{loc.upper()}")
    if h.discharge_disposition:
        _bump(row, f"count.DISPOSITION.{h.discharge_disposition.upper()}")
    if h.admit_day:
        _bump(row, f"count.ADMIT_DAY.{h.admit_day.upper()}")
    if h.discharge_day:
        _bump(row, f"count.DISCHARGE_DAY.{h.discharge_day.upper()}")
    for c in h.codes:
        family = {"ICD9_DX": "DX", "ICD9_PX": "PX", "CPT4": "CPT4", "DRG": "DRG"}[c.system]
        _bump(row, f"count.{family}.{c.precision_key}")
    for m in h.meds:
        _bump(row, f"count.MED.{m.description}")
        if m.pharm_class:
            _bump(row, f"count.MEDCLASS.{m.pharm_class}")
        if m.pharm_subclass:
            _bump(row, f"count.MEDSUBCLASS.{m.pharm_subclass}")
    by_test: dict[str, list[float]] = {}
    for e in h.labs:
        by_test.setdefault(e.test_name, []).append(e.value)
        if e.flag_key is not None:
            _bump(row, f"count.FLAG.{e.flag_key}")
    for test, values in by_test.items():
        for stat, v in _stats(values, spec.lab_within).items():
            row[f"{stat}.{test}"] = v
    return row


def list_lengths(h: Hospitalization) -> dict[str, int]:
    """Code-list lengths used for non-present counts."""
    n = {"DX": 0, "CPT4_PX": 0, "DRG": 0}
    for c in h.codes:
        if c.system == "ICD9_DX":
            n["DX"] += 1
        elif c.system in ("ICD9_PX", "CPT4"):
            n["CPT4_PX"] += 1
        else:
            n["DRG"] += 1
    return n


def max_list_lengths(stays: Iterable[Hospitalization]) -> dict[str, int]:
    d = dict.fromkeys(NONPRESENT_FAMILIES, 0)
    for h in stays:
        for fam, n in list_lengths(h).items():
            d[fam] = max(d[fam], n)
    return d


def add_nonpresent_counts(rows: Sequence[HospRow], lengths: Sequence[Mapping[str, int]],
                          max_lengths: Mapping[str, int],
                          families: Sequence[str] = NONPRESENT_FAMILIES) -> list[HospRow]:
    """Add ``nonpresent.FAMILY = D - D'`` to each stay row (D frozen from training)."""
    out = []
    for row, lens in zip(rows, lengths):
        row = dict(row)
        for fam in families:
            row[f"nonpresent.{fam}"] = float(max_lengths[fam] - lens[fam])
        out.append(row)
    return out


def aggregate_across(rows: Sequence[HospRow], spec: AggregatorSpec = DEFAULT_SPEC) -> FeatureVector:
    """Summarise a chronologically ordered sequence of stay rows (G).

    Count-type keys missing from a stay count as 0 for that stay; continuous
    keys missing from a stay are skipped, and a continuous key missing from
    every stay is not emitted (i.e. missing).
    """
    if not rows:
        raise ValueError("aggregate_across needs at least one hospitalization row")
    keys: dict[str, None] = {}
    for r in rows:
        keys.update(dict.fromkeys(r))
    out: FeatureVector = {}
    for key in sorted(keys):
        gs = spec.across_for(key)
        if gs == ("first",) or gs == ("last",):
            continue
        if key_kind(key, spec) == "count":
            seq = [r.get(key, 0.0) for r in rows]
        else:
            seq = [r[key] for r in rows if key in r]
            if not seq:
                continue
        for stat, v in _stats(seq, gs).items():
            out[f"{stat}.{key}"] = v
    # categorical first/last: one-hot of the first/last stay that records the family
    for mode, families in (("first", spec.first), ("last", spec.last)):
        for fam in families:
            seq = rows if mode == "first" else list(reversed(rows))
            for r in seq:
                hits = [k for k in r if k.startswith(fam + ".")]
                if hits:
                    for k in hits:
                        out[f"{mode}.{k}"] = r[k]
                    break
    return out


def anscombe(x):
    """Variance-stabilising transform 2*sqrt(x + 3/8) for counts."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("anscombe is defined for nonnegative counts only")
    out = 2.0 * np.sqrt(arr + 0.375)
    return float(out) if np.ndim(x) == 0 else out


def subset_features(vector: FeatureVector, mode: str,
                    rows: Sequence[HospRow] | None = None) -> FeatureVector:
    """Restrict a sample's features to one of the system feature modes.

    ``recent`` needs the per-stay ``rows`` and returns the most recent one as is.
    """
    if mode == "all":
        return dict(vector)
    if mode == "medications":
        return {k: v for k, v in vector.items() if k.startswith(MED_PREFIXES)}
    if mode == "clinical":
        return {k: vector.get(k, 0.0) for k in CLINICAL_FEATURES}
    if mode == "recent":
        if not rows:
            raise ValueError("recent mode needs the prior stay rows")
        return dict(rows[-1])
    raise ConfigError(f"unknown feature mode {mode!r}; expected one of {MODES}")


def select_columns(names: Sequence[str], mode: str) -> list[str]:
    """Column names of an 'all'-mode matrix kept by ``mode`` (not for 'recent')."""
    if mode == "all":
        return list(names)
    if mode == "medications":
        return [n for n in names if n.startswith(MED_PREFIXES)]
    if mode == "clinical":
        return [n for n in CLINICAL_FEATURES]
    raise ConfigError(f"mode {mode!r} cannot be derived by column selection")


# ---------------------------------------------------------------------------
# matrix


@dataclass
class FeatureMatrix:
    """Dense sample-by-feature matrix; NaN marks a missing continuous value.

    ``lengths_sum``/``n_priors``/``lengths_max`` carry what is needed to form
    non-present counts once D is known from the training rows of a fold.
    """

    X: np.ndarray
    names: list[str]
    kinds: list[str]
    mode: str = "all"
    n_priors: np.ndarray | None = None
    lengths_sum: np.ndarray | None = None   # (n, 3) summed prior list lengths
    lengths_max: np.ndarray | None = None   # (n, 3) max list length over priors + target
    support: list[int] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.X)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        index = {n: i for i, n in enumerate(self.names)}
        cols = []
        for n in names:
            if n in index:
                cols.append(self.X[:, index[n]])
            elif feature_kind(n) == "count":
                cols.append(np.zeros(self.X.shape[0]))
            else:
                cols.append(np.full(self.X.shape[0], np.nan))
        X = np.column_stack(cols) if cols else np.zeros((self.X.shape[0], 0))
        sup = [self.support[index[n]] if n in index and self.support else 0 for n in names]
        kinds = [self.kinds[index[n]] if n in index else feature_kind(n) for n in names]
        return FeatureMatrix(X, list(names), kinds, self.mode,
                             self.n_priors, self.lengths_sum, self.lengths_max, sup)

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        take = lambda a: None if a is None else a[idx]
        return FeatureMatrix(self.X[idx], self.names, self.kinds, self.mode,
                             take(self.n_priors), take(self.lengths_sum), take(self.lengths_max),
                             self.support)


def informative_counts(matrix: FeatureMatrix) -> np.ndarray:
    present = ~np.isnan(matrix.X)
    nonzero = present & (matrix.X != 0)
    is_count = np.array([k == "count" for k in matrix.kinds], dtype=bool)
    return np.where(is_count, nonzero.sum(axis=0), present.sum(axis=0))


def sparsity_filter(matrix: FeatureMatrix, min_support: int = 100) -> list[str]:
    """Names of features with at least ``min_support`` informative entries.

    Count features need present, non-zero entries; continuous features need
    present entries. Labels are never consulted.
    """
    counts = informative_counts(matrix)
    return [n for n, c in zip(matrix.names, counts) if c >= min_support]


def featurize_samples(stays_by_id: Mapping[str, Hospitalization],
                      samples: Sequence[TrainingSample], mode: str = "all",
                      spec: AggregatorSpec = DEFAULT_SPEC) -> FeatureMatrix:
    """Build the (unfiltered) feature matrix for all samples."""
    if mode not in MODES:
        raise ConfigError(f"unknown feature mode {mode!r}; expected one of {MODES}")
    row_cache: dict[str, HospRow] = {}
    len_cache: dict[str, dict[str, int]] = {}

    def row_of(aid: str) -> HospRow:
        if aid not in row_cache:
            row_cache[aid] = aggregate_within(stays_by_id[aid], spec)
            len_cache[aid] = list_lengths(stays_by_id[aid])
        return row_cache[aid]

    vectors = []
    n = len(samples)
    n_priors = np.zeros(n)
    lsum = np.zeros((n, len(NONPRESENT_FAMILIES)))
    lmax = np.zeros((n, len(NONPRESENT_FAMILIES)))
    for i, s in enumerate(samples):
        rows = [row_of(a) for a in s.prior_admit_ids]
        used = list(s.prior_admit_ids)
        if mode == "recent":
            vec = subset_features({}, "recent", rows)
            used = used[-1:]
        else:
            vec = subset_features(aggregate_across(rows, spec), mode)
        vectors.append(vec)
        n_priors[i] = len(used)
        row_of(s.target_admit_id)
        for j, fam in enumerate(NONPRESENT_FAMILIES):
            lsum[i, j] = sum(len_cache[a][fam] for a in used)
            lmax[i, j] = max(len_cache[a][fam] for a in list(s.prior_admit_ids) + [s.target_admit_id])

    if mode == "clinical":
        names = list(CLINICAL_FEATURES)
    else:
        names = sorted({k for v in vectors for k in v})
    kinds = [key_kind(k) if mode == "recent" else feature_kind(k) for k in names]
    col = {k: j for j, k in enumerate(names)}
    X = np.zeros((n, len(names)))
    cont = np.array([k == "continuous" for k in kinds], dtype=bool)
    X[:, cont] = np.nan
    for i, vec in enumerate(vectors):
        for k, v in vec.items():
            X[i, col[k]] = v
    m = FeatureMatrix(X, names, kinds, mode, n_priors, lsum, lmax)
    m.support = [int(c) for c in informative_counts(m)]
    return m


class NonPresentCounts:
    """Fold-local non-present count features.

    ``fit`` freezes D (max code-list length over training hospitalizations);
    ``transform`` appends ``sum.nonpresent.FAMILY`` = n_priors * D - sum(D').
    """

    def __init__(self, families: Sequence[str] = NONPRESENT_FAMILIES):
        self.families = tuple(families)
        self.max_lengths: dict[str, float] | None = None

    @property
    def names(self) -> list[str]:
        return [f"sum.nonpresent.{f}" for f in self.families]

    def fit(self, matrix: FeatureMatrix) -> "NonPresentCounts":
        idx = [NONPRESENT_FAMILIES.index(f) for f in self.families]
        self.max_lengths = {f: float(matrix.lengths_max[:, j].max()) for f, j in zip(self.families, idx)}
        return self

    def transform(self, matrix: FeatureMatrix) -> np.ndarray:
        cols = []
        for f in self.families:
            j = NONPRESENT_FAMILIES.index(f)
            cols.append(matrix.n_priors * self.max_lengths[f] - matrix.lengths_sum[:, j])
        return np.column_stack(cols)


# ---------------------------------------------------------------------------
# files


def write_feature_matrix(matrix: FeatureMatrix, outdir: str | Path, min_support: int) -> None:
    """Sparse triplets + feature dictionary + non-present auxiliaries."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "features.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "feature", "value"])
        for i in range(matrix.X.shape[0]):
            row = matrix.X[i]
            for j in np.flatnonzero(~np.isnan(row)):
                v = row[j]
                if matrix.kinds[j] == "count" and v == 0:
                    continue
                w.writerow([i, matrix.names[j], repr(float(v))])
    with open(outdir / "feature_dictionary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "feature", "kind", "support"])
        for j, name in enumerate(matrix.names):
            w.writerow([j, name, matrix.kinds[j], matrix.support[j] if matrix.support else ""])
    with open(outdir / "nonpresent_aux.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "n_priors"]
                   + [f"sum_len.{f}" for f in NONPRESENT_FAMILIES]
                   + [f"max_len.{f}" for f in NONPRESENT_FAMILIES])
        for i in range(matrix.X.shape[0]):
            w.writerow([i, int(matrix.n_priors[i])]
                       + [int(v) for v in matrix.lengths_sum[i]]
                       + [int(v) for v in matrix.lengths_max[i]])
    with open(outdir / "features_meta.json", "w", encoding="utf-8") as fh:
        json.dump({"format": "akirisk.features/1", "mode": matrix.mode,
                   "n_samples": int(matrix.X.shape[0]), "n_features": len(matrix.names),
                   "min_support": min_support}, fh, indent=2, sort_keys=True)


def read_feature_matrix(outdir: str | Path) -> FeatureMatrix:
    outdir = Path(outdir)
    with open(outdir / "features_meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(outdir / "feature_dictionary.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["feature"] for r in rows]
    kinds = [r["kind"] for r in rows]
    support = [int(r["support"]) if r["support"] else 0 for r in rows]
    n = meta["n_samples"]
    X = np.zeros((n, len(names)))
    cont = np.array([k == "continuous" for k in kinds], dtype=bool)
    X[:, cont] = np.nan
    col = {k: j for j, k in enumerate(names)}
    with open(outdir / "features.csv", encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            X[int(r["sample_index"]), col[r["feature"]]] = float(r["value"])
    n_priors = np.zeros(n)
    k = len(NONPRESENT_FAMILIES)
    lsum = np.zeros((n, k))
    lmax = np.zeros((n, k))
    with open(outdir / "nonpresent_aux.csv", encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            i = int(r["sample_index"])
            n_priors[i] = float(r["n_priors"])
            lsum[i] = [float(r[f"sum_len.{f}"]) for f in NONPRESENT_FAMILIES]
            lmax[i] = [float(r[f"max_len.{f}"]) for f in NONPRESENT_FAMILIES]
    return FeatureMatrix(X, names, kinds, meta["mode"], n_priors, lsum, lmax, support)
