"""Named systems (learner + feature mode + repeated-measures handling) and the
impute -> scale -> fit -> calibrate pipeline behind them."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError
from .featurize import NONPRESENT_FAMILIES, FeatureMatrix, NonPresentCounts, anscombe, select_columns
from .learners import (BoostedTrees, GbcConfig, PlattCalibrator, fit_gbc, fit_impute_most_frequent,
                       fit_l1_logistic, fit_platt, fit_ridge_logistic, fit_stability_logistic,
                       fit_standard_scale, gini_importance, patient_weights, sample_one_per_patient,
                       sigmoid)
from .learners.gbt import Tree

MODEL_FORMAT = "akirisk.model/1"
LEARNERS = ("gbt", "l1_logistic", "stability", "ridge_clinical", "search")


class UnknownSystemError(KeyError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    name: str
    learner: str
    C: float = 2e-3
    C1: float = 0.5
    C2: float = 1.0
    class_weighting: str = "none"
    feature_mode: str = "all"
    weighting: bool = False
    sampling: bool = False
    permute: bool = False
    anscombe: bool = False
    stability_fraction: float = 0.75
    stability_resamples: int = 50
    stability_threshold: float = 0.25
    calibration_fraction: float = 0.25
    grouped_calibration: bool = False
    gbc: GbcConfig = field(default_factory=GbcConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        d = dict(d)
        d["gbc"] = GbcConfig(**d.get("gbc", {}))
        return cls(**d)

    def with_params(self, **params) -> "SystemSpec":
        gbc_keys = {f.name for f in dataclasses.fields(GbcConfig)}
        gbc = {k: v for k, v in params.items() if k in gbc_keys}
        rest = {k: v for k, v in params.items() if k not in gbc_keys}
        spec = dataclasses.replace(self, **rest)
        if gbc:
            spec = dataclasses.replace(spec, gbc=dataclasses.replace(spec.gbc, **gbc))
        return spec


def _registry() -> dict[str, SystemSpec]:
    lr1 = dict(learner="l1_logistic", C=2e-3, class_weighting="balanced")
    hplr1 = dict(learner="l1_logistic", C=2e-4, class_weighting="balanced")
    specs = [
        SystemSpec("GBC", "gbt"),
        SystemSpec("LR1", **lr1),
        SystemSpec("ALR1", anscombe=True, **lr1),
        SystemSpec("RLR1", "stability", C1=0.5, C2=1.0, class_weighting="balanced"),
        SystemSpec("HPLR1", **hplr1),
        SystemSpec("RHPLR1", "stability", C1=0.2, C2=1.0, class_weighting="balanced"),
        SystemSpec("WGBC", "gbt", weighting=True),
        SystemSpec("WLR1", weighting=True, **lr1),
        SystemSpec("WHPLR1", weighting=True, **hplr1),
        SystemSpec("SGBC", "gbt", sampling=True),
        SystemSpec("SLR1", sampling=True, **lr1),
        SystemSpec("SHPLR1", sampling=True, **hplr1),
        SystemSpec("RGBC", "gbt", feature_mode="recent"),
        SystemSpec("MGBC", "gbt", feature_mode="medications"),
        SystemSpec("MLR1", feature_mode="medications", **lr1),
        SystemSpec("CLR", "ridge_clinical", C=1000.0, feature_mode="clinical"),
        SystemSpec("NGBC", "gbt", permute=True),
        # GBC vs LR1 chosen per fold by log loss on the calibration split
        SystemSpec("SEARCH", "search", C=2e-3, class_weighting="balanced"),
    ]
    return {s.name: s for s in specs}


SYSTEMS = _registry()


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name.upper()]
    except KeyError:
        raise UnknownSystemError(
            f"unknown system {name!r}; valid names: {', '.join(SYSTEMS)}") from None


# ---------------------------------------------------------------------------
# trained model


@dataclass
class TrainedModel:
    system: SystemSpec
    kind: str                       # gbt | l1_logistic | ridge_clinical
    input_features: list[str]       # columns taken from the feature matrix
    nonpresent: dict[str, float] | None
    impute_fill: np.ndarray
    anscombe_mask: np.ndarray | None
    scaler_mean: np.ndarray | None
    scaler_scale: np.ndarray | None
    coef: np.ndarray | None = None
    intercept: float = 0.0
    ensemble: BoostedTrees | None = None
    calibrator: PlattCalibrator | None = None
    stability_frequency: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        """Names of the model's design columns (inputs plus non-present counts)."""
        extra = [f"sum.nonpresent.{f}" for f in NONPRESENT_FAMILIES] if self.nonpresent else []
        return list(self.input_features) + extra

    def design(self, matrix: FeatureMatrix) -> np.ndarray:
        """Feature matrix -> imputed, transformed, scaled model inputs."""
        X = matrix.select(self.input_features).X
        if self.nonpresent is not None:
            npc = NonPresentCounts()
            npc.max_lengths = dict(self.nonpresent)
            X = np.column_stack([X, npc.transform(matrix)])
        X = np.array(X, dtype=float)
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.impute_fill[cols]
        if self.anscombe_mask is not None and self.anscombe_mask.any():
            X[:, self.anscombe_mask] = anscombe(np.maximum(X[:, self.anscombe_mask], 0.0))
        if self.scaler_mean is not None:
            X = (X - self.scaler_mean) / self.scaler_scale
        return X

    def decision_function(self, matrix: FeatureMatrix) -> np.ndarray:
        X = self.design(matrix)
        if self.kind == "gbt":
            return self.ensemble.decision_function(X)
        return X @ self.coef + self.intercept

    def predict_proba(self, matrix: FeatureMatrix) -> np.ndarray:
        s = self.decision_function(matrix)
        if self.calibrator is None:
            return np.clip(sigmoid(s), 1e-12, 1 - 1e-12)
        return self.calibrator(s)

    def feature_weights(self) -> np.ndarray:
        """Gini importances (trees) or coefficients on the scaled design (linear)."""
        if self.kind == "gbt":
            return gini_importance(self.ensemble)
        return np.asarray(self.coef, dtype=float)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        d = {
            "format": MODEL_FORMAT,
            "system": self.system.to_dict(),
            "kind": self.kind,
            "input_features": self.input_features,
            "nonpresent": self.nonpresent,
            "impute_fill": arr(self.impute_fill),
            "anscombe_mask": arr(self.anscombe_mask),
            "scaler_mean": arr(self.scaler_mean),
            "scaler_scale": arr(self.scaler_scale),
            "coef": arr(self.coef),
            "intercept": self.intercept,
            "calibrator": None if self.calibrator is None else [self.calibrator.a, self.calibrator.b],
            "stability_frequency": arr(self.stability_frequency),
            "info": self.info,
        }
        if self.ensemble is not None:
            e = self.ensemble
            d["ensemble"] = {"init": e.init, "learning_rate": e.learning_rate,
                             "n_features": e.n_features, "train_deviance": e.train_deviance,
                             "trees": [t.to_dict() for t in e.trees]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != MODEL_FORMAT:
            raise ConfigError(f"unsupported model format {d.get('format')!r}")
        arr = lambda a, dt=float: None if a is None else np.asarray(a, dtype=dt)
        ens = None
        if d.get("ensemble"):
            e = d["ensemble"]
            ens = BoostedTrees(e["init"], [Tree.from_dict(t) for t in e["trees"]],
                               e["learning_rate"], e["n_features"], e["train_deviance"])
        cal = d.get("calibrator")
        return cls(
            system=SystemSpec.from_dict(d["system"]), kind=d["kind"],
            input_features=d["input_features"], nonpresent=d["nonpresent"],
            impute_fill=arr(d["impute_fill"]), anscombe_mask=arr(d["anscombe_mask"], bool),
            scaler_mean=arr(d["scaler_mean"]), scaler_scale=arr(d["scaler_scale"]),
            coef=arr(d["coef"]), intercept=d["intercept"], ensemble=ens,
            calibrator=None if cal is None else PlattCalibrator(*cal),
            stability_frequency=arr(d["stability_frequency"]), info=d.get("info", {}),
        )


def save_model(model: TrainedModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return TrainedModel.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# fitting


def input_columns(system: SystemSpec, matrix: FeatureMatrix) -> list[str]:
    if system.feature_mode == "recent":
        if matrix.mode != "recent":
            raise ConfigError(f"system {system.name} needs a feature matrix built with mode 'recent'")
        return list(matrix.names)
    if matrix.mode not in ("all", system.feature_mode):
        raise ConfigError(f"system {system.name} (mode {system.feature_mode}) cannot use a "
                          f"{matrix.mode!r} feature matrix")
    if matrix.mode == system.feature_mode:
        return list(matrix.names)
    return select_columns(matrix.names, system.feature_mode)


def calibration_split(n: int, fraction: float, rng: np.random.Generator,
                      groups: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(fit_idx, calibration_idx); grouped by ``groups`` when given."""
    if groups is None:
        perm = rng.permutation(n)
        n_cal = int(round(fraction * n))
        return np.sort(perm[n_cal:]), np.sort(perm[:n_cal])
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    perm = rng.permutation(len(uniq))
    cal_groups = set(uniq[perm[: int(round(fraction * len(uniq)))]])
    is_cal = np.array([g in cal_groups for g in groups])
    return np.flatnonzero(~is_cal), np.flatnonzero(is_cal)


def _fit_design(system: SystemSpec, kind: str, matrix: FeatureMatrix, cols: list[str],
                fit_idx: np.ndarray, npc_max: dict | None) -> tuple[TrainedModel, np.ndarray]:
    """Fit imputer (+ Anscombe, scaler) on the fit rows; return a learner-less model."""
    model = TrainedModel(system, kind, cols, npc_max, np.zeros(0), None, None, None)
    fit_rows = matrix.rows(fit_idx)
    raw = fit_rows.select(cols).X
    if npc_max is not None:
        npc = NonPresentCounts()
        npc.max_lengths = dict(npc_max)
        raw = np.column_stack([raw, npc.transform(fit_rows)])
    imp = fit_impute_most_frequent(raw, model.feature_names)
    model.impute_fill = imp.fill
    X = imp.transform(raw)
    if system.anscombe and kind != "gbt":
        kinds = matrix.select(cols).kinds + ["count"] * (X.shape[1] - len(cols))
        mask = np.array([k == "count" for k in kinds], dtype=bool)
        model.anscombe_mask = mask
        X[:, mask] = anscombe(np.maximum(X[:, mask], 0.0))
    if kind != "gbt":
        sc = fit_standard_scale(X)
        model.scaler_mean, model.scaler_scale = sc.mean, sc.scale
        X = sc.transform(X)
    model.info["design_shape"] = list(X.shape)
    return model, X


def _log_loss(p, y):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def fit_system(system: SystemSpec, matrix: FeatureMatrix, y, patient_ids: Sequence[str],
               seed, calibrate: bool = True) -> TrainedModel:
    """Fit one system on the given (training) rows.

    Steps: optional one-sample-per-patient draw, optional label permutation,
    75/25 fit/calibration split, non-present D from all training stays,
    impute -> (Anscombe) -> scale -> learner on the fit part, Platt scaling on
    the calibration part. ``seed`` is any ``default_rng`` seed.
    """
    y = np.asarray(y, dtype=float)
    patient_ids = np.asarray(patient_ids)
    rng = np.random.default_rng(seed)
    rows = np.arange(len(y))
    if system.sampling:
        rows = sample_one_per_patient(list(patient_ids), rng.integers(2**63))
    if system.permute:
        y = y.copy()
        y[rows] = y[rng.permutation(rows)]
    cols = input_columns(system, matrix)
    npc_max = None
    if matrix.lengths_max is not None and system.feature_mode == "all":
        npc_max = NonPresentCounts().fit(matrix.rows(rows)).max_lengths
    frac = system.calibration_fraction if calibrate else 0.0
    fit_pos, cal_pos = calibration_split(
        len(rows), frac, rng, patient_ids[rows] if system.grouped_calibration else None)
    fit_idx, cal_idx = rows[fit_pos], rows[cal_pos]

    kinds = ["gbt", "l1_logistic"] if system.learner == "search" else [
        {"gbt": "gbt", "l1_logistic": "l1_logistic", "stability": "l1_logistic",
         "ridge_clinical": "ridge_clinical"}[system.learner]]
    candidates = []
    for kind in kinds:
        model, X = _fit_design(system, kind, matrix, cols, fit_idx, npc_max)
        yf = y[fit_idx]
        w = patient_weights(list(patient_ids[fit_idx])) if system.weighting else None
        if kind == "gbt":
            model.ensemble = fit_gbc(X, yf, w, system.gbc)
        elif system.learner == "stability":
            report, lf = fit_stability_logistic(
                X, yf, system.C1, system.C2, system.stability_fraction,
                system.stability_resamples, system.stability_threshold,
                seed=int(rng.integers(2**63)), sample_weight=w,
                class_weighting=system.class_weighting)
            model.coef, model.intercept = lf.coef, lf.intercept
            model.stability_frequency = report.frequency
        elif kind == "l1_logistic":
            lf = fit_l1_logistic(X, yf, w, C=system.C, class_weighting=system.class_weighting)
            model.coef, model.intercept = lf.coef, lf.intercept
            model.info["converged"] = bool(lf.converged)
        else:
            lf = fit_ridge_logistic(X, yf, w, C=system.C, class_weighting=system.class_weighting)
            model.coef, model.intercept = lf.coef, lf.intercept
        candidates.append(model)

    if len(candidates) > 1:
        scored = [(_log_loss(sigmoid(m.decision_function(matrix.rows(cal_idx))), y[cal_idx]), i)
                  for i, m in enumerate(candidates)]
        best = min(scored)[1]
        chosen = candidates[best]
        chosen.info["search_log_loss"] = {kinds[i]: v for v, i in scored}
    else:
        chosen = candidates[0]
    chosen.info["n_fit"] = int(len(fit_idx))
    chosen.info["n_calibration"] = int(len(cal_idx))
    if calibrate and len(cal_idx):
        chosen.calibrator = fit_platt(chosen.decision_function(matrix.rows(cal_idx)), y[cal_idx])
    return chosen
