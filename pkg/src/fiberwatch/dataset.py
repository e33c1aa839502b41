"""Windowing of traces into labeled, normalized, SNR-tagged sequences,
plus deterministic stratified splits and the JSONL dataset format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tracesim import (
    FAULT_KINDS,
    KIND_BAD_SPLICE,
    KIND_DIRTY_CONNECTOR,
    KIND_FIBER_CUT,
    KIND_TAPPING,
    OtdrTrace,
)

WINDOW_LENGTH = 30
DEFAULT_STRIDE = 15

# SNR tags are normalized by the maximum in-scope value before model input.
GAMMA_MAX_DB = 30.0

LABEL_NORMAL = "normal"
LABEL_EAVESDROPPING = "eavesdropping"
LABEL_BAD_SPLICE = "bad_splice"
LABEL_DIRTY_CONNECTOR = "dirty_connector"
LABEL_FIBER_CUT = "fiber_cut"

FAULT_LABELS = (LABEL_EAVESDROPPING, LABEL_BAD_SPLICE, LABEL_DIRTY_CONNECTOR, LABEL_FIBER_CUT)
ALL_LABELS = (LABEL_NORMAL,) + FAULT_LABELS

_KIND_TO_LABEL = {
    KIND_TAPPING: LABEL_EAVESDROPPING,
    KIND_BAD_SPLICE: LABEL_BAD_SPLICE,
    KIND_DIRTY_CONNECTOR: LABEL_DIRTY_CONNECTOR,
    KIND_FIBER_CUT: LABEL_FIBER_CUT,
}

DATASET_FORMAT = "fiberwatch-ds"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass
class Sequence:
    """One model input: a normalized window, its SNR tag, and ground truth."""

    values: list[float]
    gamma_db: float
    label: str = LABEL_NORMAL
    fault_index: int | None = None
    source: tuple[str, int] = ("", 0)

    def __post_init__(self) -> None:
        if len(self.values) != WINDOW_LENGTH:
            raise ValueError(f"expected {WINDOW_LENGTH} values, got {len(self.values)}")
        if any(not (0.0 <= v <= 1.0) for v in self.values):
            raise ValueError("values must lie in [0, 1]")
        if self.label not in ALL_LABELS:
            raise ValueError(f"unknown label: {self.label!r}")
        if self.label == LABEL_NORMAL:
            if self.fault_index is not None:
                raise ValueError("normal sequences carry no fault index")
        else:
            if self.fault_index is None:
                raise ValueError("fault sequences require a fault index")
            if not (0 <= self.fault_index < WINDOW_LENGTH):
                raise ValueError(f"fault index {self.fault_index} outside [0, {WINDOW_LENGTH})")
        self.source = (str(self.source[0]), int(self.source[1]))


@dataclass
class DatasetSplit:
    """Train/validation/test partition with the seed and fractions that made it."""

    train: list[Sequence]
    validation: list[Sequence]
    test: list[Sequence]
    seed: int
    fractions: tuple[float, float, float]

    def all_sequences(self) -> list[Sequence]:
        return self.train + self.validation + self.test


def normalize(raw: np.ndarray | list[float]) -> np.ndarray:
    """Per-window min-max map onto [0, 1]; constant windows map to zeros."""
    return scale_window(raw, 0.0)


# Where a noise-dominated window sits inside [0, 1]: anchored below center so
# that downward log-domain noise spikes cost little reconstruction error.
SCALE_ANCHOR = 0.3


def scale_window(raw: np.ndarray | list[float], range_floor_db: float) -> np.ndarray:
    """Window scaling onto [0, 1] with a floor on the resolvable range.

    Windows whose peak-to-peak range exceeds the floor carry structure and
    are min-max scaled (the floor-0 case is plain per-window min-max).
    Windows inside the floor are noise-dominated: stretching them to full
    scale would only magnify noise, so they are mapped at a fixed scale set
    by the floor, anchored below their median, and clipped to [0, 1].
    """
    x = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("window contains non-finite values")
    lo = float(x.min())
    span = float(x.max()) - lo
    if span >= range_floor_db:
        if span == 0.0:
            return np.zeros_like(x)
        return (x - lo) / span
    anchor = float(np.median(x)) - SCALE_ANCHOR * range_floor_db
    return np.clip((x - anchor) / range_floor_db, 0.0, 1.0)


def trace_noise_span(samples_db: np.ndarray, window: int = WINDOW_LENGTH) -> float:
    """Robust estimate of a trace's per-window noise range in dB.

    The lower quartile of all rolling-window peak-to-peak ranges: on quiet
    stretches the window range is pure noise, so a low quantile tracks the
    noise envelope (including the asymmetric spread of low-SNR log-domain
    noise) while ignoring event signatures and dead zones beyond a break.
    """
    samples_db = np.asarray(samples_db, dtype=np.float64)
    if len(samples_db) < window:
        raise ValueError(f"need at least {window} samples")
    view = np.lib.stride_tricks.sliding_window_view(samples_db, window)
    return float(np.quantile(view.max(axis=1) - view.min(axis=1), 0.25))


# Window scale floor: this many trace noise spans. Windows whose own range
# stays below the floor are treated as noise-dominated and not stretched.
NOISE_SPAN_SCALE = 2.0


def segment(
    trace: OtdrTrace,
    stride: int = DEFAULT_STRIDE,
    window: int = WINDOW_LENGTH,
    trace_id: str = "",
    noise_span_scale: float = NOISE_SPAN_SCALE,
) -> list[Sequence]:
    """Slide a window across the trace and label each one from annotations.

    A window containing a fault annotation takes that fault's label and its
    in-window index (the earliest fault if several); otherwise it is normal.
    Windows are scaled into [0, 1] with the range floor tied to the trace's
    noise envelope (see scale_window).
    """
    if window != WINDOW_LENGTH:
        raise ValueError(f"window length is fixed at {WINDOW_LENGTH}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    samples = trace.samples_db
    n = len(samples)
    if n < window:
        raise ValueError(f"trace has {n} samples; at least {window} required")
    gamma = GAMMA_MAX_DB if trace.snr_db is None else float(trace.snr_db)
    range_floor = noise_span_scale * trace_noise_span(samples, window)
    fault_anns = sorted(
        ((idx, kind) for kind, idx in trace.annotations if kind in FAULT_KINDS)
    )
    sequences = []
    for offset in range(0, n - window + 1, stride):
        label = LABEL_NORMAL
        fault_index: int | None = None
        for idx, kind in fault_anns:
            if offset <= idx < offset + window:
                label = _KIND_TO_LABEL[kind]
                fault_index = idx - offset
                break
        sequences.append(
            Sequence(
                values=[
                    float(v)
                    for v in scale_window(samples[offset : offset + window], range_floor)
                ],
                gamma_db=gamma,
                label=label,
                fault_index=fault_index,
                source=(trace_id, offset),
            )
        )
    return sequences


def split(
    sequences: list[Sequence],
    fractions: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Deterministic shuffled partition, stratified by label."""
    if not sequences:
        raise ValueError("cannot split an empty sequence list")
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be three nonnegative ratios")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, seq in enumerate(sequences):
        by_label.setdefault(seq.label, []).append(i)
    parts: tuple[list[Sequence], list[Sequence], list[Sequence]] = ([], [], [])
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        bounds = (0, n_train, n_train + n_val, n)
        for part, (a, b) in zip(parts, zip(bounds, bounds[1:])):
            part.extend(sequences[j] for j in idx[a:b])
    train, validation, test = parts
    return DatasetSplit(
        train=train,
        validation=validation,
        test=test,
        seed=seed,
        fractions=tuple(float(f) for f in fractions),
    )


# --- JSONL dataset format ----------------------------------------------------

def _sequence_to_record(seq: Sequence, part: str) -> dict:
    return {
        "split": part,
        "values": seq.values,
        "gamma_db": seq.gamma_db,
        "label": seq.label,
        "fault_index": seq.fault_index,
        "source": [seq.source[0], seq.source[1]],
    }


def _sequence_from_record(record: dict) -> tuple[str, Sequence]:
    part = record["split"]
    if part not in ("train", "validation", "test"):
        raise ValueError(f"unknown split: {part!r}")
    seq = Sequence(
        values=[float(v) for v in record["values"]],
        gamma_db=float(record["gamma_db"]),
        label=str(record["label"]),
        fault_index=None if record["fault_index"] is None else int(record["fault_index"]),
        source=(record["source"][0], record["source"][1]),
    )
    return part, seq


def write_dataset(split_data: DatasetSplit, path: str) -> None:
    """Line-delimited JSON: a header line, then one sequence per line."""
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": split_data.seed,
        "fractions": list(split_data.fractions),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for part, seqs in (
            ("train", split_data.train),
            ("validation", split_data.validation),
            ("test", split_data.test),
        ):
            for seq in seqs:
                f.write(json.dumps(_sequence_to_record(seq, part)) + "\n")


def read_dataset(path: str) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as f:
        header_line = f.readline()
        if not header_line:
            raise DatasetFormatError(f"{path}: empty file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: line 1: invalid header ({exc})") from exc
        if header.get("format") != DATASET_FORMAT:
            raise DatasetFormatError(
                f"{path}: format {header.get('format')!r}, expected {DATASET_FORMAT!r}"
            )
        if header.get("version") != DATASET_VERSION:
            raise DatasetFormatError(
                f"{path}: version {header.get('version')!r}, expected {DATASET_VERSION}"
            )
        parts: dict[str, list[Sequence]] = {"train": [], "validation": [], "test": []}
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                part, seq = _sequence_from_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from exc
            parts[part].append(seq)
    fractions = header.get("fractions", [0.0, 0.0, 0.0])
    return DatasetSplit(
        train=parts["train"],
        validation=parts["validation"],
        test=parts["test"],
        seed=int(header["seed"]),
        fractions=tuple(float(x) for x in fractions),
    )


def normalized_gamma(gamma_db: float) -> float:
    """SNR tag scaled into [0, 1] by the maximum in-scope SNR."""
    if not math.isfinite(gamma_db):
        raise ValueError("gamma must be finite")
    return min(max(gamma_db, 0.0), GAMMA_MAX_DB) / GAMMA_MAX_DB
