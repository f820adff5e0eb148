"""Command-line pipeline: synth, ingest, preprocess, stats, cluster, cv,
convert and the end-to-end pipeline command.

Stage outputs are plain files under the report directory, so stages can be
rerun individually. Every emitted report ends with a config-hash footer
(JSON sidecars carry the hash as a key). Exit codes: 0 success, 1 runtime
error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import (CohortSchema, conversion_labels, ingest_cohort,
                     write_cohort)
from .config import ConfigError, RunConfig, config_hash, load_config
from .classify import LinearSVM
from .evaluation import (CVSettings, classification_metrics, group_stats,
                         kfold_split, kmeans, run_cv, window_diff_stats)
from .forecast import ensemble_average, read_forecasts, write_forecasts
from .preprocess import (build_supervised, filter_min_visits,
                         filter_missingness, filter_required_months,
                         forward_fill, select_features)
from .survival import (build_survival_records, conversion_probabilities,
                       cox_fit, write_probability_table)
from .synth import CohortSpec, generate_cohort, synthetic_schema

GROUP_LABEL = {1: "CN", 2: "MCI", 3: "AD"}


def _footer(cfg):
    return f"# config-hash: {config_hash(cfg)}\n"


def _write_csv(path, header, rows, cfg):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
        fh.write(_footer(cfg))


def _report_dir(cfg) -> Path:
    d = Path(cfg.report_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "plotdata").mkdir(exist_ok=True)
    return d


def _fmt(x, digits=6):
    return f"{x:.{digits}f}"


# -- synth ----------------------------------------------------------------

def _spec_from_config(cfg: RunConfig) -> CohortSpec:
    s = cfg.synth
    return CohortSpec(n_patients=s.patients, visit_schedule=tuple(s.schedule),
                      group_proportions=tuple(s.group_proportions),
                      slope_mean=s.slope_mean, slope_sd=s.slope_sd,
                      offset_sd=s.offset_sd, n_features=s.n_features,
                      feature_noise_sd=s.feature_noise_sd,
                      score_noise_sd=s.score_noise_sd,
                      missing_rate=s.missing_rate, seed=cfg.seed)


def cmd_synth(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    try:
        spec = _spec_from_config(cfg)
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cohort, truth = generate_cohort(spec)
    schema = synthetic_schema(spec)
    write_cohort(cohort, out / "cohort.csv", schema)
    with open(out / "cohort.csv", "a") as fh:
        fh.write(_footer(cfg))
    schema.save(out / "schema.yaml")
    with open(out / "schema.yaml", "a") as fh:
        fh.write(_footer(cfg))
    truth.to_json(out / "truth.json")
    import json
    with open(out / "truth.json") as fh:
        payload = json.load(fh)
    payload["config_hash"] = config_hash(cfg)
    with open(out / "truth.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(f"synth: wrote {cohort.n_patients} patients, "
          f"{cohort.n_visits()} visits to {out / 'cohort.csv'}")
    return 0


# -- ingest ----------------------------------------------------------------

def _load_input_cohort(cfg: RunConfig):
    # unset input falls back to a cohort generated into the report directory
    cohort_path = cfg.input_cohort or str(Path(cfg.report_dir) / "cohort.csv")
    schema_path = cfg.input_schema or str(Path(cfg.report_dir) / "schema.yaml")
    if not Path(cohort_path).exists():
        raise ConfigError(f"cohort file not found: {cohort_path} "
                          "(set input.cohort or run `synth` first)")
    if not Path(schema_path).exists():
        raise ConfigError(f"schema file not found: {schema_path} "
                          "(set input.schema or run `synth` first)")
    schema = CohortSchema.load(schema_path)
    return ingest_cohort(cohort_path, schema), schema


def cmd_ingest(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    cohort, schema = _load_input_cohort(cfg)
    cells = sum(v.missing.size for vs in cohort.patients.values() for v in vs)
    masked = sum(int(v.missing.sum()) for vs in cohort.patients.values()
                 for v in vs)
    rows = [
        ("patients", cohort.n_patients),
        ("visits", cohort.n_visits()),
        ("feature_columns", cohort.n_features),
        ("missing_cell_fraction",
         _fmt(masked / cells if cells else 0.0)),
    ]
    _write_csv(out / "ingest_summary.csv", ["key", "value"], rows, cfg)
    print(f"ingest: {cohort.n_patients} patients, {cohort.n_visits()} visits, "
          f"{cohort.n_features} feature columns")
    return 0


# -- preprocess --------------------------------------------------------------

def _preprocessed_paths(cfg):
    out = Path(cfg.report_dir)
    return out / "preprocessed_cohort.csv", out / "preprocessed_schema.yaml"


def cmd_preprocess(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    cohort, schema = _load_input_cohort(cfg)
    pp = cfg.preprocess

    waterfall = []
    removed_rows = []
    c1, rep1 = filter_min_visits(cohort, pp.min_visits)
    c2, rep2 = filter_required_months(c1, tuple(pp.required_months),
                                      pp.month_tolerance)
    c3, rep3 = filter_missingness(c2, pp.max_missing)
    for rep in (rep1, rep2, rep3):
        waterfall.append((rep.stage, rep.n_before, rep.n_after, rep.n_removed))
        removed_rows.extend((rep.stage, pid, reason)
                            for pid, reason in rep.removed)

    filled, fill_report = forward_fill(c3)
    if pp.features:
        filled = select_features(filled, pp.features)
    sup = build_supervised(filled)
    waterfall.append(("supervised", c3.n_patients,
                      c3.n_patients - len(sup.zero_row_patients),
                      len(sup.zero_row_patients)))

    cohort_path, schema_path = _preprocessed_paths(cfg)
    out_schema = CohortSchema(
        id_column=schema.id_column, month_column=schema.month_column,
        adas13_column=schema.adas13_column, cs_column=schema.cs_column,
        feature_groups={c: filled.feature_groups[c]
                        for c in filled.feature_names},
        missing_sentinels=schema.missing_sentinels,
        month_tolerance=schema.month_tolerance)
    write_cohort(filled, cohort_path, out_schema)
    with open(cohort_path, "a") as fh:
        fh.write(_footer(cfg))
    out_schema.save(schema_path)

    _write_csv(out / "waterfall.csv", ["stage", "before", "after", "dropped"],
               waterfall, cfg)
    _write_csv(out / "filter_report.csv", ["stage", "patient_id", "reason"],
               removed_rows, cfg)
    _write_csv(out / "fill_report.csv", ["patient_id", "column"],
               fill_report.unfilled, cfg)
    for stage, before, after, dropped in waterfall:
        print(f"{stage},{before},{after},{dropped}")
    return 0


def _load_preprocessed(cfg: RunConfig):
    cohort_path, schema_path = _preprocessed_paths(cfg)
    if not cohort_path.exists():
        raise ConfigError(f"{cohort_path} not found: run `preprocess` first")
    schema = CohortSchema.load(schema_path)
    return ingest_cohort(cohort_path, schema)


# -- stats ---------------------------------------------------------------

def cmd_stats(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    cohort, _ = _load_input_cohort(cfg)
    gs = group_stats(cohort)
    rows = [(GROUP_LABEL[cs], _fmt(st.mean, 4), _fmt(st.sd, 4), st.n_visits,
             st.n_patients, int(st.sd_flagged))
            for cs, st in sorted(gs.per_group.items())]
    _write_csv(out / "stats_groups.csv",
               ["group", "mean_adas13", "sd_adas13", "n_visits", "n_patients",
                "sd_flagged"], rows, cfg)
    wrows = [(w.window, _fmt(w.mean, 4), _fmt(w.maximum, 4), _fmt(w.minimum, 4),
              _fmt(w.median, 4), _fmt(w.sd, 4), w.n)
             for w in window_diff_stats(cohort, cfg.preprocess.month_tolerance)]
    _write_csv(out / "stats_windows.csv",
               ["window", "mean", "max", "min", "median", "sd", "n"],
               wrows, cfg)
    for cs, series in gs.trajectories.items():
        rows = [(m, _fmt(mean, 4), _fmt(sd, 4), n) for m, mean, sd, n in series]
        _write_csv(out / "plotdata" / f"trajectory_{GROUP_LABEL[cs]}.csv",
                   ["month", "mean", "sd", "n"], rows, cfg)
    print(f"stats: wrote group and window statistics to {out}")
    return 0


# -- cluster -----------------------------------------------------------------

def cmd_cluster(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    cohort, _ = _load_input_cohort(cfg)
    values, keys = [], []
    for pid, visits in cohort.patients.items():
        for v in visits:
            if v.adas13 is not None:
                values.append(v.adas13)
                keys.append((pid, v.month))
    if len(values) < cfg.cluster.k:
        raise ConfigError(f"cluster.k={cfg.cluster.k} exceeds the number of "
                          f"scored visits ({len(values)})")
    result = kmeans(np.asarray(values), cfg.cluster.k, seed=cfg.seed)
    rows = [(pid, month, _fmt(val, 4), int(c))
            for (pid, month), val, c in zip(keys, values, result.assignments)]
    _write_csv(out / "cluster_assignments.csv",
               ["patient_id", "month", "adas13", "cluster"], rows, cfg)
    crow = [(i, _fmt(float(c[0]), 6)) for i, c in enumerate(result.centroids)]
    _write_csv(out / "cluster_centroids.csv", ["cluster", "centroid"],
               crow + [("sse", _fmt(result.sse, 6))], cfg)
    print(f"cluster: k={cfg.cluster.k}, sse={result.sse:.4f}")
    return 0


# -- cv ---------------------------------------------------------------------

def cmd_cv(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    cohort = _load_preprocessed(cfg)
    settings = CVSettings(k=cfg.cv.folds, seed=cfg.seed,
                          hyper_budget=cfg.cv.hyper_budget,
                          normalize_scope=cfg.cv.normalize_scope)
    result = run_cv(cohort, settings)

    kinds = ("sGP", "pGP", "tGP")
    rows = [(f, *(_fmt(result.per_fold_mae[k][f]) for k in kinds))
            for f in range(settings.k)]
    _write_csv(out / "cv_fold_mae.csv", ["fold", *kinds], rows, cfg)

    rows = [(k, _fmt(result.summary[k][0]), _fmt(result.summary[k][1]),
             f"{result.summary[k][0]:.2f}±{result.summary[k][1]:.2f}")
            for k in kinds]
    _write_csv(out / "cv_summary.csv", ["model", "mean_mae", "sd_mae",
                                        "mean_pm_sd"], rows, cfg)

    rows = []
    for k in kinds:
        for f in range(settings.k):
            rows.append((k, f, *(_fmt(x) for x in result.per_horizon_mae[k][f])))
    _write_csv(out / "cv_horizon_mae.csv",
               ["model", "fold", "mae_6", "mae_12", "mae_18", "mae_24"],
               rows, cfg)

    write_forecasts(out / "forecasts.csv", result.forecasts, _footer(cfg))
    _write_csv(out / "plotdata" / "mae_per_fold.csv",
               ["fold", *kinds],
               [(f, *(_fmt(result.per_fold_mae[k][f]) for k in kinds))
                for f in range(settings.k)], cfg)
    for k in kinds:
        mean, sd = result.summary[k]
        print(f"cv: {k} MAE {mean:.4f}±{sd:.4f}")
    return 0


# -- convert ------------------------------------------------------------------

def cmd_convert(cfg: RunConfig) -> int:
    out = _report_dir(cfg)
    cohort = _load_preprocessed(cfg)
    forecasts_path = out / "forecasts.csv"
    if not forecasts_path.exists():
        raise ConfigError(f"{forecasts_path} not found: run `cv` first")
    forecasts = read_forecasts(forecasts_path)

    labels = conversion_labels(cohort, tolerance=cfg.preprocess.month_tolerance)

    by_patient = {}
    for f in forecasts:
        if f.anchor_month == 0:
            by_patient.setdefault(f.patient_id, {})[f.model_kind] = f
    pids, averaged, baseline_scores = [], [], {}
    excluded = []
    for pid in sorted(by_patient):
        trio = by_patient[pid]
        if len(trio) != 3 or pid not in labels:
            continue
        if labels[pid].baseline_excluded:
            excluded.append(pid)
            continue
        pids.append(pid)
        averaged.append(ensemble_average(trio["sGP"], trio["pGP"], trio["tGP"]))
        month0 = next(v for v in cohort.patients[pid] if v.month == 0)
        baseline_scores[pid] = month0.adas13
    if not pids:
        raise RuntimeError("no patients with anchor-0 forecasts of all three "
                           "model kinds")
    averaged = np.asarray(averaged)

    records = build_survival_records(averaged, pids, labels,
                                     mode=cfg.cox.mode,
                                     baseline_scores=baseline_scores)
    model = cox_fit(records)
    probs = np.stack([
        conversion_probabilities(model, r.z,
                                 normalize=cfg.cox.normalize_probabilities)
        for r in records])
    truth_flags = np.array([labels[p].converted for p in pids])
    write_probability_table(out / "conversion_probabilities.csv",
                            [(pid, probs[i], truth_flags[i])
                             for i, pid in enumerate(pids)], _footer(cfg))

    # patient-independent CV for the classifier; a degenerate single-class
    # training fold falls back to the constant predictor
    y = np.where(truth_flags, 1.0, -1.0)
    k = min(cfg.classifier.folds, len(pids))
    if k < 2:
        raise RuntimeError("need at least 2 patients to cross-validate the "
                           "classifier")
    plan = kfold_split(pids, k=k, seed=cfg.seed)
    pred = np.zeros(len(pids))
    margin = np.zeros(len(pids))
    index_of = {pid: i for i, pid in enumerate(pids)}
    for f in range(k):
        test_idx = [index_of[p] for p in plan.patients_in(f)]
        train_idx = [i for i in range(len(pids)) if i not in set(test_idx)]
        if not test_idx:
            continue
        y_train = y[train_idx]
        if np.unique(y_train).size < 2:
            const = float(y_train[0])
            for i in test_idx:
                pred[i], margin[i] = const, const
            continue
        svm = LinearSVM(C=cfg.classifier.C, epochs=cfg.classifier.epochs,
                        seed=cfg.seed, class_weight=cfg.classifier.class_weight)
        svm.fit(probs[train_idx], y_train)
        scores = svm.decision_function(probs[test_idx])
        for i, s in zip(test_idx, scores):
            margin[i] = s
            pred[i] = 1.0 if s >= 0 else -1.0

    rows = [(pid, int(truth_flags[i]), int(pred[i] > 0), _fmt(margin[i]))
            for i, pid in enumerate(pids)]
    _write_csv(out / "classifier_predictions.csv",
               ["patient_id", "ground_truth_conversion",
                "predicted_conversion", "margin"], rows, cfg)

    report = classification_metrics(pred, y)
    _write_csv(out / "classifier_metrics.csv",
               ["precision", "recall", "f1", "accuracy",
                "tp", "fp", "fn", "tn", "undefined"],
               [(_fmt(report.precision, 4), _fmt(report.recall, 4),
                 _fmt(report.f1, 4), _fmt(report.accuracy, 4),
                 report.tp, report.fp, report.fn, report.tn,
                 ";".join(report.undefined))], cfg)
    beta = ";".join(_fmt(b, 4) for b in model.beta_)
    _write_csv(out / "cox_model.csv",
               ["beta", "n_events", "iterations", "log_partial_likelihood"],
               [(beta, model.n_events_, model.fit_report_.iterations,
                 _fmt(model.fit_report_.log_partial_likelihood, 4))], cfg)
    print(f"convert: {len(pids)} patients ({len(excluded)} baseline-excluded), "
          f"accuracy {report.accuracy:.4f}")
    return 0


# -- pipeline ------------------------------------------------------------------

def cmd_pipeline(cfg: RunConfig) -> int:
    _report_dir(cfg)
    steps = [cmd_preprocess, cmd_cv, cmd_convert]
    if cfg.input_cohort is None:
        steps.insert(0, cmd_synth)
    for step in steps:
        rc = step(cfg)
        if rc:
            return rc
    return 0


# -- entry point -----------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "stats": cmd_stats,
    "cluster": cmd_cluster,
    "cv": cmd_cv,
    "convert": cmd_convert,
    "pipeline": cmd_pipeline,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adforecast",
        description="Cognitive-score forecasting and 24-month conversion "
                    "prediction pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("synth", "generate a synthetic cohort"),
            ("ingest", "validate and summarize a cohort file"),
            ("preprocess", "filter, fill, select and assemble the dataset"),
            ("stats", "cohort group and window statistics"),
            ("cluster", "k-means clustering of ADAS scores"),
            ("cv", "cross-validated GP forecasting (sGP/pGP/tGP)"),
            ("convert", "Cox probabilities + SVM conversion classification"),
            ("pipeline", "run synth/ingest, preprocess, cv, convert end-to-end")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--report-dir", help="override config report_dir")
        if name == "synth":
            p.add_argument("--patients", type=int,
                           help="override synth.patients")
        if name == "preprocess":
            p.add_argument("--min-visits", type=int)
            p.add_argument("--required-months", type=str,
                           help="comma-separated month list")
            p.add_argument("--max-missing", type=float)
        if name in ("cv", "preprocess"):
            p.add_argument("--normalize-scope",
                           choices=["per_fold", "global"])
        if name == "cv":
            p.add_argument("--folds", type=int)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.report_dir:
        cfg.report_dir = args.report_dir
    if getattr(args, "patients", None) is not None:
        cfg.synth.patients = args.patients
    if getattr(args, "min_visits", None) is not None:
        cfg.preprocess.min_visits = args.min_visits
    if getattr(args, "required_months", None):
        cfg.preprocess.required_months = tuple(
            int(m) for m in args.required_months.split(","))
    if getattr(args, "max_missing", None) is not None:
        cfg.preprocess.max_missing = args.max_missing
    if getattr(args, "normalize_scope", None):
        cfg.cv.normalize_scope = args.normalize_scope
    if getattr(args, "folds", None) is not None:
        cfg.cv.folds = args.folds
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        from .config import _validate
        _validate(cfg)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
