"""Command-line entry point: ``akirisk <stage> ...``.

Stages read and write files under ``--workdir``::

    raw/           admin.csv lab.csv pharmacy.csv ground_truth.csv   (synth)
    store.json.gz  rejects.csv ingest_summary.json                   (ingest)
    labels.csv samples.csv cohort.json                               (label)
    features/<mode>/                                                 (featurize)
    models/<SYSTEM>.json models/<SYSTEM>_weights.csv                 (train)
    eval/<SYSTEM>/                                                   (evaluate, error-analysis)
    compare/comparison.csv                                           (compare)

Exit codes: 0 success, 1 validation or invariant failure, 2 usage error or
unknown system, 3 missing input artifact. Failures print one JSON line to
stderr: ``{"status": "error", "code": 3, "kind": "missing_artifact", ...}``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .ehr import DataError, load_store, parse_tables, save_store, write_rejects
from .evaluation import (DEFAULT_ROPE, METRICS, bootstrap_ci, correlated_ttest,
                         error_analysis, error_by_diagnosis_method, loo_patient_perturbation,
                         macro_predictions, patient_level, run_cv, summarize, utilization_analysis)
from .evaluation.analysis import DEFAULT_ERROR_ALPHA, ERROR_FEATURE_SETS
from .featurize import featurize_samples, read_feature_matrix, sparsity_filter, write_feature_matrix
from .labeling import (build_samples, diagnosis_crosstab, label_all, read_labels, read_samples,
                       select_cohort, write_labels, write_samples)
from .synthgen import SynthConfig, generate
from .systems import SYSTEMS, UnknownSystemError, _fit_design, fit_system, get_system, input_columns, save_model

log = logging.getLogger("akirisk")

METRIC_ALIASES = {"roc": "roc_auc", "pr": "pr_auc", "brier": "brier", "log_loss": "log_loss",
                  "roc_auc": "roc_auc", "pr_auc": "pr_auc"}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(3, "missing_artifact", f"{what} not found: {path} (run the earlier stage first)")
    return path


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(2, "usage", f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _system(args):
    spec = get_system(args.system)
    params = _parse_params(getattr(args, "param", None))
    if params:
        try:
            spec = spec.with_params(**params)
        except TypeError as exc:
            raise CliError(2, "usage", f"bad --param: {exc}") from None
    return spec


# ---------------------------------------------------------------------------
# stages


def cmd_synth(args, cfg) -> int:
    out = Path(args.out) if args.out else args.workdir / "raw"
    coefs = None
    if args.coefficients:
        coefs = json.loads(args.coefficients)
    scfg = SynthConfig(n_patients=args.n_patients, prevalence=args.prevalence, seed=args.seed,
                       noise=args.noise)
    if coefs is not None:
        scfg.coefficients = coefs
    data = generate(scfg, jobs=args.jobs)
    data.write(out)
    _write_json(out / "synth_meta.json", {
        "n_patients": scfg.n_patients, "target_prevalence": scfg.prevalence,
        "intercept": data.intercept, "sample_prevalence": data.achieved_prevalence,
        "coefficients": scfg.coefficients, "noise": scfg.noise, "seed": scfg.seed,
    })
    log.info("wrote synthetic tables to %s", out)
    return 0


def cmd_ingest(args, cfg) -> int:
    raw = args.workdir / "raw"
    paths = [Path(p) if p else raw / name for p, name in
             ((args.admin, "admin.csv"), (args.lab, "lab.csv"), (args.pharmacy, "pharmacy.csv"))]
    for p in paths:
        _need(p, "source table")
    store = parse_tables(*paths, cfg=cfg.ingest, strict=args.strict)
    save_store(store, args.workdir / "store.json.gz")
    write_rejects(store.rejects, args.workdir / "rejects.csv")
    _write_json(args.workdir / "ingest_summary.json", {
        "input_rows": store.input_counts, "rejected_rows": len(store.rejects),
        "patients": len(store.patients), "hospitalizations": len(store),
    })
    return 0


def cmd_label(args, cfg) -> int:
    store = load_store(_need(args.workdir / "store.json.gz", "patient store"))
    labels = label_all(store, cfg.labeling)
    cohort = select_cohort(store, labels, cfg.labeling)
    samples = build_samples(cohort, labels)
    write_labels(labels, args.workdir / "labels.csv")
    write_samples(samples, args.workdir / "samples.csv")
    n_pos = sum(s.label for s in samples)
    _write_json(args.workdir / "cohort.json", {
        "tallies": cohort.tallies, "crosstab": diagnosis_crosstab(labels),
        "samples": len(samples), "positives": n_pos,
        "prevalence": n_pos / len(samples) if samples else float("nan"),
    })
    return 0


def cmd_featurize(args, cfg) -> int:
    mode = args.mode or cfg.featurize.mode
    min_support = cfg.featurize.min_support if args.min_support is None else args.min_support
    store = load_store(_need(args.workdir / "store.json.gz", "patient store"))
    samples = read_samples(_need(args.workdir / "samples.csv", "samples"))
    matrix = featurize_samples(store.by_admit_id(), samples, mode)
    kept = sparsity_filter(matrix, min_support)
    log.info("featurize: %d of %d features reach support %d", len(kept), len(matrix.names), min_support)
    write_feature_matrix(matrix.select(kept), args.workdir / "features" / mode, min_support)
    return 0


def _load_design(args, system):
    samples = read_samples(_need(args.workdir / "samples.csv", "samples"))
    fdir = args.workdir / "features" / system.feature_mode
    if not fdir.exists() and system.feature_mode != "recent":
        fdir = args.workdir / "features" / "all"
    matrix = read_feature_matrix(_need(fdir / "features_meta.json", "feature matrix").parent)
    if matrix.X.shape[0] != len(samples):
        raise CliError(1, "validation", "feature matrix and samples disagree on sample count")
    try:
        input_columns(system, matrix)
    except ConfigError as exc:
        raise CliError(3, "missing_artifact", str(exc)) from None
    y = np.array([s.label for s in samples], dtype=float)
    pids = np.array([s.patient_id for s in samples])
    return samples, matrix, y, pids


def cmd_train(args, cfg) -> int:
    system = _system(args)
    samples, matrix, y, pids = _load_design(args, system)
    model = fit_system(system, matrix, y, pids, [args.seed, 0])
    out = args.workdir / "models"
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / f"{system.name}.json")
    w = model.feature_weights()
    _write_csv(out / f"{system.name}_weights.csv", ["feature", "weight"],
               sorted(zip(model.feature_names, map(float, w)), key=lambda r: (-abs(r[1]), r[0])))
    return 0


def _comparison_rows(metrics_by_system: dict[str, list[dict]], metrics, rope_override=None):
    rows = []
    names = list(metrics_by_system)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            ra = {(r["iteration"], r["fold"]): r for r in metrics_by_system[names[a]]}
            rb = {(r["iteration"], r["fold"]): r for r in metrics_by_system[names[b]]}
            common = sorted(set(ra) & set(rb))
            for m in metrics:
                diffs = [ra[k][m] - rb[k][m] for k in common
                         if not (math.isnan(ra[k][m]) or math.isnan(rb[k][m]))]
                if len(diffs) < 2:
                    raise CliError(1, "validation",
                                   f"{names[a]} vs {names[b]}: fewer than two paired folds for {m}")
                rope = DEFAULT_ROPE[m] if rope_override is None else rope_override
                # test-set fraction 1/k, k read off the fold indices
                k = 1 + max(key[1] for key in common)
                dec = correlated_ttest(diffs, rope, rho=1.0 / max(k, 2))
                rows.append([names[a], names[b], m, rope, dec.p_higher, dec.p_rope, dec.p_lower,
                             float(np.mean(diffs)), len(diffs)])
    return rows


COMPARISON_HEADER = ["system_i", "system_j", "metric", "rope", "p_i_higher", "p_rope",
                     "p_i_lower", "mean_difference", "n_folds"]


def _read_metrics(path: Path) -> list[dict]:
    with open(_need(path, "metric records"), encoding="utf-8", newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            rec = {"iteration": int(r["iteration"]), "fold": int(r["fold"])}
            for m in METRICS:
                rec[m] = float(r[m]) if r[m] != "" else float("nan")
            out.append(rec)
        return out


def cmd_evaluate(args, cfg) -> int:
    system = _system(args)
    samples, matrix, y, pids = _load_design(args, system)
    out = args.workdir / "eval" / system.name
    report = run_cv(matrix, y, pids, system, args.iterations, args.folds, args.seed, args.jobs)

    _write_csv(out / "metrics.csv",
               ["system", "iteration", "fold", "n_test", "n_positive"] + list(METRICS),
               [[r.system, r.iteration, r.fold, r.n_test, r.n_positive, r.roc_auc, r.pr_auc,
                 r.brier, r.log_loss] for r in report.records])
    summary = summarize(report)
    summary["system_spec"] = system.to_dict()
    _write_json(out / "summary.json", summary)
    _write_csv(out / "calibration.csv", ["bin_lo", "bin_hi", "count", "mean_predicted", "observed"],
               [[c["lo"], c["hi"], c["count"], c["mean_predicted"], c["observed"]]
                for c in summary["calibration_curve"]])
    _write_csv(out / "predictions.csv",
               ["sample_index", "patient_id", "target_admit_id", "label", "iteration", "fold",
                "prediction"],
               ([i, s.patient_id, s.target_admit_id, int(s.label), it, int(report.fold_of[it, i]),
                 float(report.predictions[it, i])]
                for it in range(report.iterations) for i, s in enumerate(samples)))

    mean_pred = macro_predictions(report.predictions)
    pl = patient_level(mean_pred, y, pids)
    _write_csv(out / "patient_level.csv", ["patient_id", "n_samples", "mean_predicted", "observed"],
               zip(pl.patient_ids, pl.n_samples, pl.predicted.tolist(), pl.observed.tolist()))
    _write_csv(out / "patient_calibration.csv",
               ["bin_lo", "bin_hi", "count", "mean_predicted", "observed"], pl.curve.rows())

    util = utilization_analysis(report.predictions, y, pids)
    _write_csv(out / "utilization.csv",
               ["hospitalizations", "outcome", "n_samples", "n_patients", "mean_abs_error",
                "sd_abs_error", "mean_prediction_sd"],
               [[b.hospitalizations, b.outcome, b.n_samples, b.n_patients, b.mean_abs_error,
                 b.sd_abs_error, b.mean_prediction_sd] for b in util.bins])

    W = report.fold_weights
    rows = []
    for j, name in enumerate(report.feature_names):
        col = W[:, j]
        if not np.any(col != 0):
            continue
        lo, hi = bootstrap_ci(col, args.bootstrap, seed=[args.seed, j]) if len(col) > 1 \
            else (col[0], col[0])
        rows.append([name, float(col.mean()), float(lo), float(hi), float(np.mean(col != 0))])
    rows.sort(key=lambda r: (-abs(r[1]), r[0]))
    _write_csv(out / "features.csv",
               ["feature", "mean_weight", "ci_low", "ci_high", "nonzero_fraction"], rows)

    labels_path = args.workdir / "labels.csv"
    if labels_path.exists():
        labels = read_labels(labels_path)
        case = y == 1
        recs = [labels[s.target_admit_id] for s, c in zip(samples, case) if c]
        groups = error_by_diagnosis_method(np.abs(mean_pred[case] - 1.0),
                                           [r.by_code for r in recs], [r.by_scr for r in recs])
        _write_csv(out / "error_by_method.csv", ["group", "n", "mean_error"],
                   [[g.group, g.n, g.mean] for g in groups.values()])
        _write_csv(out / "error_by_method_hist.csv", ["group", "bin_lo", "bin_hi", "count"],
                   [[g.group, float(g.edges[k]), float(g.edges[k + 1]), int(g.counts[k])]
                    for g in groups.values() for k in np.flatnonzero(g.counts)])

    if args.compare_with:
        others = {system.name: _read_metrics(out / "metrics.csv")}
        for name in args.compare_with.split(","):
            name = name.strip().upper()
            if name and name != system.name:
                others[name] = _read_metrics(args.workdir / "eval" / name / "metrics.csv")
        _write_csv(out / "comparison.csv", COMPARISON_HEADER, _comparison_rows(others, METRICS))

    bad = [k for k, ok in report.invariants.items() if not ok]
    if bad:
        raise CliError(1, "invariant_violation", f"CV invariants failed: {', '.join(bad)}")
    return 0


def cmd_compare(args, cfg) -> int:
    if len(args.systems) < 2:
        raise CliError(2, "usage", "compare needs at least two systems or evaluation directories")
    by_system = {}
    for item in args.systems:
        p = Path(item)
        if p.is_dir():
            name = p.name
        else:
            name = get_system(item).name
            p = args.workdir / "eval" / name
        by_system[name] = _read_metrics(p / "metrics.csv")
    metrics = METRICS if args.metric == "all" else (METRIC_ALIASES[args.metric],)
    rows = _comparison_rows(by_system, metrics, args.rope)
    out = Path(args.out) if args.out else args.workdir / "compare" / "comparison.csv"
    _write_csv(out, COMPARISON_HEADER, rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(COMPARISON_HEADER)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return 0


def _parse_alpha(items) -> dict:
    alpha = dict(DEFAULT_ERROR_ALPHA)
    for item in items or []:
        try:
            key, val = item.split("=", 1)
            stratum, fs = key.split(":", 1)
            alpha[(stratum, fs)] = float(val)
        except ValueError:
            raise CliError(2, "usage", f"--alpha expects STRATUM:SET=VALUE, got {item!r}") from None
    return alpha


def cmd_error_analysis(args, cfg) -> int:
    system = get_system(args.system)
    samples = read_samples(_need(args.workdir / "samples.csv", "samples"))
    out = args.workdir / "eval" / system.name
    preds_path = _need(out / "predictions.csv", "evaluation predictions")
    n = len(samples)
    P = {}
    with open(preds_path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            P.setdefault(int(r["iteration"]), np.full(n, np.nan))[int(r["sample_index"])] = float(r["prediction"])
    pred = macro_predictions(np.vstack([P[k] for k in sorted(P)]))
    matrix = read_feature_matrix(_need(args.workdir / "features" / "all" / "features_meta.json",
                                       "feature matrix (mode all)").parent)
    y = np.array([s.label for s in samples], dtype=float)
    pids = np.array([s.patient_id for s in samples])
    results = error_analysis(pred, y, matrix, pids, feature_sets=args.feature_sets.split(","),
                             alpha=_parse_alpha(args.alpha), iterations=args.iterations,
                             k=args.folds, seed=args.seed, bootstrap_iterations=args.bootstrap)
    rows = []
    for res in results:
        for name, coef, lo, hi, nz in res.rows():
            rows.append([res.stratum, res.feature_set, res.alpha, name, coef, lo, hi, nz])
    _write_csv(out / "error_analysis.csv",
               ["stratum", "feature_set", "alpha", "feature", "mean_coef", "ci_low", "ci_high",
                "nonzero_fraction"], rows)
    _write_json(out / "error_analysis_summary.json", [
        {"stratum": r.stratum, "feature_set": r.feature_set, "alpha": r.alpha,
         "n_features": len(r.names), "n_nonzero": int(np.sum(r.coef != 0)), "test_mse": r.test_mse}
        for r in results])

    if args.loo:
        hp = get_system("HPLR1")
        _, X = _fit_design(hp, "l1_logistic", matrix, input_columns(hp, matrix), np.arange(n), None)
        pert = loo_patient_perturbation(X, y, pids, C=hp.C, class_weighting=hp.class_weighting)
        _write_csv(out / "loo_perturbation.csv", ["patient_id", "n_samples", "l1_distance"],
                   zip(pert.patient_ids, pert.n_samples, pert.distance.tolist()))
    return 0


# ---------------------------------------------------------------------------
# parser


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand.

    The subcommand copy uses SUPPRESS defaults so it does not overwrite values
    given before the subcommand.
    """
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", type=Path, default=d(Path(".")), help="artifact directory (default .)")
    common.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    common.add_argument("--iterations", type=int, default=d(50), help="CV iterations (default 50)")
    common.add_argument("--folds", type=int, default=d(5), help="CV folds (default 5)")
    common.add_argument("--config", default=d(None), help="INI config file (default: $AKIRISK_CONFIG)")
    common.add_argument("--jobs", type=int, default=d(None), help="worker processes (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(suppress=True)
    p = argparse.ArgumentParser(prog="akirisk", description=__doc__.split("\n")[0],
                                parents=[_common_flags(suppress=False)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic source tables")
    s.add_argument("--n-patients", type=int, default=2000)
    s.add_argument("--prevalence", type=float, default=0.062)
    s.add_argument("--noise", type=float, default=0.25)
    s.add_argument("--coefficients", help='JSON map, e.g. \'{"prior_aki": 0, "age": 0}\'')
    s.add_argument("--out", help="output directory (default <workdir>/raw)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="parse and join the three source tables")
    s.add_argument("--admin")
    s.add_argument("--lab")
    s.add_argument("--pharmacy")
    s.add_argument("--strict", action="store_true", help="fail on the first malformed row")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("label", parents=[common], help="label stays, select cohort, build samples")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("featurize", parents=[common], help="aggregate prior stays into features")
    s.add_argument("--mode", choices=("all", "medications", "clinical", "recent"))
    s.add_argument("--min-support", type=int)
    s.set_defaults(func=cmd_featurize)

    for name, func, helptext in (("train", cmd_train, "fit a system on all samples"),
                                 ("evaluate", cmd_evaluate, "iterated grouped cross-validation")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--system", required=True, help=f"one of {', '.join(SYSTEMS)}")
        s.add_argument("--param", action="append", metavar="KEY=VALUE",
                       help="override a system parameter, e.g. C=0.01 or n_estimators=50")
        if name == "evaluate":
            s.add_argument("--bootstrap", type=int, default=10_000, help="bootstrap iterations for CIs")
            s.add_argument("--compare-with", help="comma-separated systems already evaluated")
        s.set_defaults(func=func)

    s = sub.add_parser("compare", parents=[common], help="Bayesian correlated t-test between systems")
    s.add_argument("systems", nargs="+", help="system names or evaluation directories")
    s.add_argument("--metric", default="all", choices=("all",) + tuple(sorted(set(METRIC_ALIASES))))
    s.add_argument("--rope", type=float, help="ROPE width (default per metric)")
    s.add_argument("--out", help="output CSV (default <workdir>/compare/comparison.csv)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("error-analysis", parents=[common], help="regress prediction errors on features")
    s.add_argument("--system", required=True)
    s.add_argument("--feature-sets", default=",".join(ERROR_FEATURE_SETS))
    s.add_argument("--alpha", action="append", metavar="STRATUM:SET=VALUE",
                   help="lasso penalty, e.g. cases:diagnoses=0.015")
    s.add_argument("--bootstrap", type=int, default=10_000)
    s.add_argument("--loo", action="store_true", help="also run leave-one-patient-out perturbation")
    s.set_defaults(func=cmd_error_analysis)
    return p


def _error_line(code: int, kind: str, message: str) -> None:
    print(json.dumps({"status": "error", "code": code, "kind": kind, "message": message},
                     sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args.workdir = Path(args.workdir)
    args.jobs = args.jobs or os.cpu_count() or 1
    try:
        cfg = load_config(args.config)
        args.workdir.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg)
    except CliError as exc:
        _error_line(exc.code, exc.kind, exc.message)
        return exc.code
    except UnknownSystemError as exc:
        _error_line(2, "unknown_system", exc.args[0])
        return 2
    except (ConfigError, DataError, ValueError) as exc:
        _error_line(1, "validation", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
