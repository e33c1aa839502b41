"""Detection, diagnosis, and localization metrics plus report rendering.

Binary conventions: a fault is the positive class. Zero-denominator metrics
are reported as 0.0 with a degenerate flag rather than NaN.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

REPORT_SCHEMA = "report/v1"


@dataclass
class BinaryMetrics:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def binary_metrics(tp: int, tn: int, fp: int, fn: int) -> BinaryMetrics:
    """Precision, recall, and their harmonic mean from confusion counts."""
    if min(tp, tn, fp, fn) < 0:
        raise ValueError("confusion counts must be nonnegative")
    degenerate = False
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return BinaryMetrics(precision, recall, f1, degenerate)


def _check_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    if labels.all() or not labels.any():
        raise ValueError("both classes must be present")
    return scores, labels


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """ROC points and trapezoidal AUC, sweeping every unique score.

    Returns (points, auc) where points has one (fpr, tpr) row per unique
    threshold plus the two endpoints (0,0) and (1,1).
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tps = np.cumsum(sorted_labels)
    fps = np.cumsum(~sorted_labels)
    # Keep one point per unique threshold: the last row of each tie block.
    distinct = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tps = tps[distinct]
    fps = fps[distinct]
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    tpr = np.r_[0.0, tps / n_pos, 1.0]
    fpr = np.r_[0.0, fps / n_neg, 1.0]
    auc = float(np.trapezoid(tpr, fpr))
    return np.column_stack([fpr, tpr]), auc


def pr_curve(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Precision-recall points and step-interpolated area (AUPRC).

    Precision is held right-continuous: the area adds P_k * (R_k - R_{k-1})
    at each threshold, never linear chords (which overestimate).
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tps = np.cumsum(sorted_labels)
    preds = np.arange(1, len(labels) + 1)
    distinct = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tps = tps[distinct]
    preds = preds[distinct]
    n_pos = int(labels.sum())
    precision = tps / preds
    recall = tps / n_pos
    auprc = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    points = np.column_stack([np.r_[0.0, recall], np.r_[1.0, precision]])
    return points, auprc


@dataclass
class LocalizationStats:
    errors_index: np.ndarray
    rmse_index: float
    rmse_m: float
    mean_index: float
    std_index: float
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray


def localization_errors(
    predictions: np.ndarray,
    truths: np.ndarray,
    sample_spacing_m: float,
    bin_width: float = 0.5,
) -> LocalizationStats:
    """Signed prediction errors in index units plus RMSE in indices and meters."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ValueError(
            f"length mismatch: {predictions.shape} predictions vs {truths.shape} truths"
        )
    errors = predictions - truths
    rmse_index = float(np.sqrt(np.mean(errors * errors)))
    lo = math.floor(float(errors.min()) / bin_width) * bin_width
    hi = math.ceil(float(errors.max()) / bin_width) * bin_width
    if hi <= lo:
        hi = lo + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, _ = np.histogram(errors, bins=edges)
    return LocalizationStats(
        errors_index=errors,
        rmse_index=rmse_index,
        rmse_m=rmse_index * sample_spacing_m,
        mean_index=float(errors.mean()),
        std_index=float(errors.std()),
        histogram_edges=edges,
        histogram_counts=counts,
    )


@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray  # counts[true, predicted]

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = np.where(sums > 0, self.counts / sums, 0.0)
        return rates


def confusion_matrix(true: list[str], predicted: list[str], labels: list[str]) -> ConfusionMatrix:
    if len(true) != len(predicted):
        raise ValueError("true/predicted length mismatch")
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(true, predicted):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(labels=list(labels), counts=counts)


SNR_BIN_MAX = 30


def snr_bin(gamma_db: float) -> int:
    """1 dB bins over [0, 30]; 30 dB falls in the last bin."""
    return min(max(int(math.floor(gamma_db)), 0), SNR_BIN_MAX)


def per_snr_accuracy(gammas: np.ndarray, correct: np.ndarray) -> dict[int, tuple[int, float]]:
    """Per-bin (count, accuracy); empty bins are absent, never zero."""
    gammas = np.asarray(gammas, dtype=np.float64)
    correct = np.asarray(correct).astype(bool)
    out: dict[int, tuple[int, float]] = {}
    bins = np.array([snr_bin(g) for g in gammas])
    for b in sorted(set(bins.tolist())):
        mask = bins == b
        out[b] = (int(mask.sum()), float(correct[mask].mean()))
    return out


def per_snr_rmse(
    gammas: np.ndarray, errors_index: np.ndarray, sample_spacing_m: float
) -> dict[int, tuple[int, float, float]]:
    """Per-bin (count, rmse_index, rmse_m); empty bins absent."""
    gammas = np.asarray(gammas, dtype=np.float64)
    errors = np.asarray(errors_index, dtype=np.float64)
    out: dict[int, tuple[int, float, float]] = {}
    bins = np.array([snr_bin(g) for g in gammas])
    for b in sorted(set(bins.tolist())):
        mask = bins == b
        rmse = float(np.sqrt(np.mean(errors[mask] ** 2)))
        out[b] = (int(mask.sum()), rmse, rmse * sample_spacing_m)
    return out


@dataclass
class EvalReport:
    """Everything the assessment battery produces, JSON-serializable."""

    seed: int
    detection: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    diagnosis: dict = field(default_factory=dict)
    localization: dict = field(default_factory=dict)
    model_comparison: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "seed": self.seed,
            "detection": self.detection,
            "baselines": self.baselines,
            "diagnosis": self.diagnosis,
            "localization": self.localization,
            "model_comparison": self.model_comparison,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unknown report schema: {d.get('schema')!r}")
        return EvalReport(
            seed=int(d["seed"]),
            detection=d.get("detection", {}),
            baselines=d.get("baselines", {}),
            diagnosis=d.get("diagnosis", {}),
            localization=d.get("localization", {}),
            model_comparison=d.get("model_comparison", {}),
        )


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def render_report(report: EvalReport, out_dir: str) -> list[str]:
    """Write report.json plus plot-ready CSVs; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit_csv(name: str, header: list[str], rows: list[list]) -> None:
        path = os.path.join(out_dir, name)
        _write_csv(path, header, rows)
        written.append(path)

    json_path = os.path.join(out_dir, "report.json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(json_path)

    det = report.detection
    if "roc_points" in det:
        emit_csv("roc.csv", ["fpr", "tpr"], [[float(a), float(b)] for a, b in det["roc_points"]])
    if "pr_points" in det:
        emit_csv(
            "pr.csv", ["recall", "precision"], [[float(a), float(b)] for a, b in det["pr_points"]]
        )
    if report.baselines:
        rows = [
            [method, vals["f1"], vals["auprc"]]
            for method, vals in report.baselines.items()
        ]
        emit_csv("table1_detection_comparison.csv", ["method", "f1", "auprc"], rows)
    diag = report.diagnosis
    if "per_snr_accuracy" in diag:
        rows = [
            [int(b), int(c), float(a)]
            for b, (c, a) in sorted(diag["per_snr_accuracy"].items(), key=lambda kv: int(kv[0]))
        ]
        emit_csv("per_snr_accuracy.csv", ["snr_bin_db", "count", "accuracy"], rows)
    if "confusion_counts" in diag:
        labels = diag["confusion_labels"]
        rows = [
            [t] + [int(v) for v in row]
            for t, row in zip(labels, diag["confusion_counts"])
        ]
        emit_csv("confusion_matrix.csv", ["true_label"] + list(labels), rows)
    loc = report.localization
    if "histogram_edges" in loc:
        edges = loc["histogram_edges"]
        counts = loc["histogram_counts"]
        rows = [
            [float(lo), float(hi), int(c)]
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        ]
        emit_csv("localization_histogram.csv", ["error_low_idx", "error_high_idx", "count"], rows)
    if "per_snr_rmse" in loc:
        rows = [
            [int(b), int(c), float(ri), float(rm)]
            for b, (c, ri, rm) in sorted(loc["per_snr_rmse"].items(), key=lambda kv: int(kv[0]))
        ]
        emit_csv("per_snr_rmse.csv", ["snr_bin_db", "count", "rmse_index", "rmse_m"], rows)
    if report.model_comparison:
        rows = [
            [name, vals["accuracy"]]
            for name, vals in report.model_comparison.items()
            if isinstance(vals, dict) and "accuracy" in vals
        ]
        emit_csv("table3_model_comparison.csv", ["model", "average_accuracy"], rows)
    return written


def load_report(path: str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        return EvalReport.from_dict(json.load(f))
