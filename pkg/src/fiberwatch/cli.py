"""Command-line pipeline: dataset generation, training, calibration,
evaluation, and end-to-end trace monitoring.

Exit codes: 0 success, 2 configuration/input validation error, 3 error while
processing traces or running inference.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import anomaly, baselines, diagnoser, evaluation
from .anomaly import GruAutoencoder, TrainConfig
from .config import ConfigError, RunConfig, load_config
from .dataset import (
    FAULT_LABELS,
    LABEL_FIBER_CUT,
    LABEL_NORMAL,
    DatasetFormatError,
    read_dataset,
    segment,
    write_dataset,
)
from .diagnoser import MultiTaskBiGru
from .generator import (
    generate_detection_dataset,
    generate_diagnosis_dataset,
    generate_flat_dataset,
)
from .nn import LossWeights, ModelFormatError
from .tracesim import DEFAULT_PULSE_WIDTH_SAMPLES, TraceFormatError, read_trace

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFERENCE = 3


class InferenceError(RuntimeError):
    """Raised when trace processing or model inference fails."""


def _ensure_dirs(cfg: RunConfig) -> None:
    for sub in ("datasets", "models", "reports", "curves"):
        os.makedirs(cfg.path(sub), exist_ok=True)


def _train_config(cfg: RunConfig, epochs: int) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        patience=cfg.patience,
        val_fraction=cfg.val_fraction,
        seed=cfg.seed,
    )


def _write_curve(path: str, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        writer.writerows(history.rows())


def cmd_gen(cfg: RunConfig) -> int:
    _ensure_dirs(cfg)
    gen = cfg.generator
    write_dataset(
        generate_detection_dataset(gen, cfg.ae_size, fault_fraction=cfg.ae_fault_fraction),
        cfg.ae_dataset_path,
    )
    write_dataset(generate_diagnosis_dataset(gen, cfg.diag_size), cfg.diag_dataset_path)
    write_dataset(generate_flat_dataset(gen, cfg.flat_size), cfg.flat_dataset_path)
    print(
        f"generated datasets (seed={cfg.seed}): "
        f"ae={cfg.ae_size} diag={cfg.diag_size} flat={cfg.flat_size} -> {cfg.path('datasets')}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_train_ae(cfg: RunConfig) -> int:
    _ensure_dirs(cfg)
    split = read_dataset(cfg.ae_dataset_path)
    model, history = anomaly.train_ae(split.train, _train_config(cfg, cfg.ae_epochs))
    model.save(cfg.ae_model_path, seed=cfg.seed)
    _write_curve(cfg.path("curves", "ae_training.csv"), history)
    print(
        f"trained autoencoder: best epoch {history.best_epoch} "
        f"val loss {history.best_val_loss:.6f} -> {cfg.ae_model_path}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    _ensure_dirs(cfg)
    split = read_dataset(cfg.ae_dataset_path)
    model = GruAutoencoder.load(cfg.ae_model_path)
    threshold = anomaly.calibrate_threshold(model, split.validation, seed=cfg.seed)
    anomaly.write_threshold(threshold, cfg.threshold_path)
    print(
        f"calibrated threshold theta={threshold.theta:.6f} "
        f"(P={threshold.precision:.4f} R={threshold.recall:.4f} F1={threshold.f1:.4f}) "
        f"-> {cfg.threshold_path}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_train_diag(cfg: RunConfig, flat: bool) -> int:
    _ensure_dirs(cfg)
    weights = LossWeights(cfg.lambda1, cfg.lambda2)
    train_config = _train_config(cfg, cfg.diag_epochs)
    if flat:
        split = read_dataset(cfg.flat_dataset_path)
        model, history = diagnoser.train_flat_model_b(
            split.train, split.validation, weights, train_config
        )
        out_path, curve = cfg.flat_model_path, "flat_training.csv"
    else:
        split = read_dataset(cfg.diag_dataset_path)
        model, history = diagnoser.train_diagnoser(
            split.train, split.validation, weights, train_config
        )
        out_path, curve = cfg.diag_model_path, "diag_training.csv"
    model.save(out_path, seed=cfg.seed)
    _write_curve(cfg.path("curves", curve), history)
    print(
        f"trained {'flat 5-class' if flat else '4-class'} model: best epoch "
        f"{history.best_epoch} val loss {history.best_val_loss:.6f} -> {out_path}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    _ensure_dirs(cfg)
    spacing = cfg.generator.sample_spacing_m
    ae_split = read_dataset(cfg.ae_dataset_path)
    diag_split = read_dataset(cfg.diag_dataset_path)
    flat_split = read_dataset(cfg.flat_dataset_path)
    ae_model = GruAutoencoder.load(cfg.ae_model_path)
    threshold = anomaly.read_threshold(cfg.threshold_path)
    diag_model = MultiTaskBiGru.load(cfg.diag_model_path, diagnoser.MODEL_KIND_ABIGRU)
    flat_model = MultiTaskBiGru.load(cfg.flat_model_path, diagnoser.MODEL_KIND_FLAT)

    report = evaluation.EvalReport(seed=cfg.seed)

    # Detection: autoencoder scores on the mixed test split, plus baselines.
    test = ae_split.test
    is_fault = np.array([s.label != LABEL_NORMAL for s in test])
    scores = anomaly.score_batch(ae_model, test)
    predicted = scores > threshold.theta
    tp = int(np.sum(predicted & is_fault))
    tn = int(np.sum(~predicted & ~is_fault))
    fp = int(np.sum(predicted & ~is_fault))
    fn = int(np.sum(~predicted & is_fault))
    metrics = evaluation.binary_metrics(tp, tn, fp, fn)
    roc_points, auc = evaluation.roc_curve(scores, is_fault)
    pr_points, auprc = evaluation.pr_curve(scores, is_fault)
    report.detection = {
        "theta": threshold.theta,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "auc": auc,
        "auprc": auprc,
        "roc_points": roc_points.tolist(),
        "pr_points": pr_points.tolist(),
    }

    normal_train = anomaly.encode_batch(ae_split.train)
    test_x = anomaly.encode_batch(test)
    forest = baselines.if_fit(normal_train, seed=cfg.seed)
    lof = baselines.LocalOutlierFactor().fit(normal_train)
    report.baselines = {
        "gru_ae": baselines.baseline_evaluate(scores, is_fault),
        "isolation_forest": baselines.baseline_evaluate(forest.score(test_x), is_fault),
        "local_outlier_factor": baselines.baseline_evaluate(lof.score(test_x), is_fault),
    }

    # Diagnosis and localization on the fault-only test split.
    results = diagnoser.diagnose_batch(diag_model, diag_split.test, spacing)
    true_labels = [s.label for s in diag_split.test]
    pred_labels = [r.predicted_class for r in results]
    confusion = evaluation.confusion_matrix(true_labels, pred_labels, list(FAULT_LABELS))
    gammas = np.array([s.gamma_db for s in diag_split.test])
    correct = np.array([t == p for t, p in zip(true_labels, pred_labels)])
    report.diagnosis = {
        "accuracy": confusion.accuracy,
        "confusion_labels": confusion.labels,
        "confusion_counts": confusion.counts.tolist(),
        "confusion_rates": confusion.row_normalized().tolist(),
        "per_snr_accuracy": {
            str(b): [c, a] for b, (c, a) in evaluation.per_snr_accuracy(gammas, correct).items()
        },
    }
    truths = np.array([s.fault_index for s in diag_split.test], dtype=np.float64)
    preds = np.array([r.predicted_index for r in results])
    loc = evaluation.localization_errors(preds, truths, spacing)
    report.localization = {
        "rmse_index": loc.rmse_index,
        "rmse_m": loc.rmse_m,
        "mean_index": loc.mean_index,
        "std_index": loc.std_index,
        "histogram_edges": loc.histogram_edges.tolist(),
        "histogram_counts": loc.histogram_counts.tolist(),
        "per_snr_rmse": {
            str(b): [c, ri, rm]
            for b, (c, ri, rm) in evaluation.per_snr_rmse(gammas, loc.errors_index, spacing).items()
        },
    }

    # Integrated (detector gate + 4-class) vs flat 5-class, on the 5-class test.
    flat_test = flat_split.test
    flat_true = [s.label for s in flat_test]
    gate_scores = anomaly.score_batch(ae_model, flat_test)
    gated_results = diagnoser.diagnose_batch(diag_model, flat_test, spacing)
    model_a_pred = [
        LABEL_NORMAL if score <= threshold.theta else res.predicted_class
        for score, res in zip(gate_scores, gated_results)
    ]
    flat_results = diagnoser.diagnose_batch(flat_model, flat_test, spacing)
    model_b_pred = [r.predicted_class for r in flat_results]
    acc_a = float(np.mean([t == p for t, p in zip(flat_true, model_a_pred)]))
    acc_b = float(np.mean([t == p for t, p in zip(flat_true, model_b_pred)]))
    report.model_comparison = {
        "integrated_detector_plus_diagnoser": {"accuracy": acc_a},
        "flat_five_class": {"accuracy": acc_b},
    }

    written = evaluation.render_report(report, cfg.report_dir)
    print(
        f"evaluation complete: detection F1={metrics.f1:.4f} AUC={auc:.4f}; "
        f"diagnosis acc={confusion.accuracy:.4f}; localization RMSE={loc.rmse_m:.4f} m; "
        f"model A acc={acc_a:.4f} vs B {acc_b:.4f}; {len(written)} files -> {cfg.report_dir}",
        file=sys.stderr,
    )
    return EXIT_OK


def _merge_alerts(alerts: list[dict], pulse_width: int) -> list[dict]:
    """Merge alerts whose estimated positions lie within one pulse width,
    keeping the highest-confidence window of each group."""
    if not alerts:
        return []
    alerts = sorted(alerts, key=lambda a: a["absolute_index"])
    groups: list[list[dict]] = [[alerts[0]]]
    for alert in alerts[1:]:
        if alert["absolute_index"] - groups[-1][-1]["absolute_index"] <= pulse_width:
            groups[-1].append(alert)
        else:
            groups.append([alert])
    return [max(group, key=lambda a: a["confidence"]) for group in groups]


def _suppress_after_cut(alerts: list[dict], pulse_width: int) -> list[dict]:
    """Beyond a detected cut the fiber is dark; windows there only see the
    dead zone, so their alerts are artifacts and are dropped."""
    cut_positions = [a["absolute_index"] for a in alerts if a["fault_class"] == LABEL_FIBER_CUT]
    if not cut_positions:
        return alerts
    cut_at = min(cut_positions)
    return [a for a in alerts if a["window_offset"] <= cut_at + pulse_width]


def monitor_trace(
    trace_path: str,
    ae_model: GruAutoencoder,
    threshold,
    diag_model: MultiTaskBiGru,
    stride: int,
    pulse_width: int = DEFAULT_PULSE_WIDTH_SAMPLES,
) -> list[dict]:
    """Segment one trace, detect anomalies, diagnose and localize them."""
    try:
        trace = read_trace(trace_path)
    except (TraceFormatError, OSError) as exc:
        raise InferenceError(f"unreadable trace {trace_path}: {exc}") from exc
    trace_id = os.path.splitext(os.path.basename(trace_path))[0]
    try:
        windows = segment(trace, stride=stride, trace_id=trace_id)
    except ValueError as exc:
        raise InferenceError(f"{trace_path}: {exc}") from exc
    scores = anomaly.score_batch(ae_model, windows)
    hits = [i for i in range(len(windows)) if scores[i] > threshold.theta]
    alerts = []
    if hits:
        results = diagnoser.diagnose_batch(
            diag_model, [windows[i] for i in hits], trace.sample_spacing_m
        )
        for i, res in zip(hits, results):
            window = windows[i]
            offset = window.source[1]
            absolute_index = offset + res.predicted_index
            alerts.append(
                {
                    "trace_id": trace_id,
                    "window_offset": offset,
                    "verdict": anomaly.VERDICT_ANOMALOUS,
                    "fault_class": res.predicted_class,
                    "confidence": max(res.class_probs.values()),
                    "fault_index": res.predicted_index,
                    "absolute_index": absolute_index,
                    "distance_m": absolute_index * trace.sample_spacing_m,
                    "gamma_db": window.gamma_db,
                    "anomaly_score": float(scores[i]),
                    "threshold": threshold.theta,
                }
            )
    return _suppress_after_cut(_merge_alerts(alerts, pulse_width), pulse_width)


def cmd_monitor(cfg: RunConfig, target: str, paths: dict[str, str | None]) -> int:
    ae_path = paths.get("ae_model") or cfg.ae_model_path
    threshold_path = paths.get("threshold") or cfg.threshold_path
    diag_path = paths.get("diag_model") or cfg.diag_model_path
    ae_model = GruAutoencoder.load(ae_path)
    threshold = anomaly.read_threshold(threshold_path)
    diag_model = MultiTaskBiGru.load(diag_path, diagnoser.MODEL_KIND_ABIGRU)
    if os.path.isdir(target):
        trace_paths = sorted(
            os.path.join(target, name) for name in os.listdir(target) if name.endswith(".json")
        )
        if not trace_paths:
            raise ConfigError(f"no .json traces under {target}")
    else:
        trace_paths = [target]
    total_alerts = 0
    for path in trace_paths:
        alerts = monitor_trace(path, ae_model, threshold, diag_model, cfg.stride)
        for alert in alerts:
            sys.stdout.write(json.dumps(alert) + "\n")
        total_alerts += len(alerts)
        print(f"{path}: {len(alerts)} alert(s)", file=sys.stderr)
    sys.stdout.flush()
    print(f"monitored {len(trace_paths)} trace(s), {total_alerts} alert(s)", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberwatch",
        description="Fiber monitoring pipeline: simulate, train, calibrate, evaluate, monitor.",
    )
    parser.add_argument("--config", help="JSON run-configuration file")
    parser.add_argument("--seed", type=int, help="master seed (mandatory here or in the config)")
    parser.add_argument("--out", help="output directory for all artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate the synthetic datasets")
    gen.add_argument("--ae-size", type=int, dest="ae_size")
    gen.add_argument("--diag-size", type=int, dest="diag_size")
    gen.add_argument("--flat-size", type=int, dest="flat_size")

    train_ae = sub.add_parser("train-ae", help="train the autoencoder detector")
    train_ae.add_argument("--epochs", type=int, dest="ae_epochs")

    sub.add_parser("calibrate", help="calibrate the detection threshold")

    train_diag = sub.add_parser("train-diag", help="train the diagnosis/localization model")
    train_diag.add_argument("--flat", action="store_true", help="train the flat 5-class variant")
    train_diag.add_argument("--epochs", type=int, dest="diag_epochs")
    train_diag.add_argument("--lambda1", type=float, dest="lambda1")
    train_diag.add_argument("--lambda2", type=float, dest="lambda2")

    sub.add_parser("eval", help="run the full assessment battery")

    monitor = sub.add_parser("monitor", help="monitor trace files and emit alerts")
    monitor.add_argument("target", help="trace JSON file or a directory of them")
    monitor.add_argument("--ae-model", dest="ae_model")
    monitor.add_argument("--threshold", dest="threshold")
    monitor.add_argument("--diag-model", dest="diag_model")
    return parser


_OVERRIDE_KEYS = (
    "seed",
    "ae_size",
    "diag_size",
    "flat_size",
    "ae_epochs",
    "diag_epochs",
    "lambda1",
    "lambda2",
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
        if args.out is not None:
            overrides["out_dir"] = args.out
        cfg = load_config(args.config, overrides)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train-ae":
            return cmd_train_ae(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "train-diag":
            return cmd_train_diag(cfg, flat=args.flat)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "monitor":
            paths = {
                "ae_model": args.ae_model,
                "threshold": args.threshold,
                "diag_model": args.diag_model,
            }
            return cmd_monitor(cfg, args.target, paths)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DatasetFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InferenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


if __name__ == "__main__":
    sys.exit(main())
