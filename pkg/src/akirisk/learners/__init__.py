from .calibration import CalibrationError, PlattCalibrator, fit_platt
from .gbt import BoostedTrees, GbcConfig, fit_gbc, gini_importance
from .logistic import (ConvergenceWarning, LinearFit, fit_l1_least_squares, fit_l1_logistic,
                       fit_ridge_logistic, kkt_residual, sigmoid)
from .preprocessing import (MostFrequentImputer, StandardScaler, fit_impute_most_frequent,
                            fit_standard_scale)
from .stability import SelectionError, StabilityReport, fit_stability_logistic, stability_select
from .weighting import patient_weights, sample_one_per_patient

__all__ = [
    "BoostedTrees", "CalibrationError", "ConvergenceWarning", "GbcConfig", "LinearFit",
    "MostFrequentImputer", "PlattCalibrator", "SelectionError", "StabilityReport",
    "StandardScaler", "fit_gbc", "fit_impute_most_frequent", "fit_l1_least_squares",
    "fit_l1_logistic", "fit_platt", "fit_ridge_logistic", "fit_stability_logistic",
    "fit_standard_scale", "gini_importance", "kkt_residual", "patient_weights",
    "sample_one_per_patient", "sigmoid", "stability_select",
]
