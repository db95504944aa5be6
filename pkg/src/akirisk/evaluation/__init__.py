from .analysis import (PatientLevel, error_analysis, error_by_diagnosis_method, error_regression,
                       loo_patient_perturbation, macro_predictions, patient_level, permute_labels,
                       utilization_analysis)
from .compare import DEFAULT_ROPE, RopeDecision, bootstrap_ci, correlated_ttest
from .cv import EvalReport, FoldPlan, MetricRecord, grouped_kfold, micro_macro, run_cv, summarize
from .metrics import (METRICS, CalibrationCurve, UndefinedMetric, all_metrics, brier,
                      calibration_curve, log_loss, pr_auc, roc_auc)
