"""Synthetic dataset and trace generation for training and evaluation.

Every sequence is produced through the full pipeline: build a short fiber
plan, render the noiseless trace, inject noise at a drawn SNR, segment, and
keep the window that contains the event (or a clean window for normals).

Default event severities are chosen so that the four fault classes remain
mutually separable after per-window min-max normalization, which erases
absolute scale: tapping and bad splices are both pure loss steps, so their
loss ranges are kept disjoint; dirty connectors carry a tall reflective peak
plus a visible loss step; a cut drops to the noise floor. Monitored spans are
modeled without splitters or connectors so that any step or peak inside a
window is evidence of a fault.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (
    DatasetSplit,
    FAULT_LABELS,
    LABEL_BAD_SPLICE,
    LABEL_DIRTY_CONNECTOR,
    LABEL_EAVESDROPPING,
    LABEL_FIBER_CUT,
    LABEL_NORMAL,
    Sequence,
    segment,
)
from .tracesim import (
    DEFAULT_PULSE_WIDTH_SAMPLES,
    EventSpec,
    FiberPlan,
    KIND_BAD_SPLICE,
    KIND_DIRTY_CONNECTOR,
    KIND_FIBER_CUT,
    OtdrTrace,
    build_trace,
    default_sample_spacing,
    inject_noise,
)

_LABEL_TO_KIND = {
    LABEL_EAVESDROPPING: "tapping",
    LABEL_BAD_SPLICE: KIND_BAD_SPLICE,
    LABEL_DIRTY_CONNECTOR: KIND_DIRTY_CONNECTOR,
    LABEL_FIBER_CUT: KIND_FIBER_CUT,
}


@dataclass
class EventRanges:
    """Severity ranges the generator draws event parameters from."""

    # Tapping loss = tap_k / bend_radius, radius drawn uniformly.
    tap_radius_mm: tuple[float, float] = (3.4, 10.0)
    tap_k_db_mm: float = 15.0
    tap_loss_clamp_db: tuple[float, float] = (0.02, 6.0)
    splice_loss_db: tuple[float, float] = (6.5, 9.5)
    dirty_reflectance_db: tuple[float, float] = (-42.0, -36.0)
    dirty_loss_db: tuple[float, float] = (2.5, 5.0)


@dataclass
class GenConfig:
    """Everything the dataset generator needs, fully seeded."""

    seed: int = 0
    snr_range_db: tuple[float, float] = (0.0, 30.0)
    trace_samples: int = 240
    window_offset: int = 105
    sample_spacing_m: float = field(default_factory=default_sample_spacing)
    attenuation_db_per_km: float = 0.2
    launch_power_db: float = 0.0
    noise_floor_db: float = -35.0
    stride: int = 15
    ranges: EventRanges = field(default_factory=EventRanges)


def _draw(rng: np.random.Generator, lo_hi: tuple[float, float]) -> float:
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def _fault_event(cfg: GenConfig, rng: np.random.Generator, label: str, position_m: float) -> EventSpec:
    r = cfg.ranges
    if label == LABEL_EAVESDROPPING:
        return EventSpec.tapping(
            position_m,
            bend_radius_mm=_draw(rng, r.tap_radius_mm),
            k_db_mm=r.tap_k_db_mm,
            min_db=r.tap_loss_clamp_db[0],
            max_db=r.tap_loss_clamp_db[1],
        )
    if label == LABEL_BAD_SPLICE:
        return EventSpec(KIND_BAD_SPLICE, position_m, loss_db=_draw(rng, r.splice_loss_db))
    if label == LABEL_DIRTY_CONNECTOR:
        return EventSpec(
            KIND_DIRTY_CONNECTOR,
            position_m,
            loss_db=_draw(rng, r.dirty_loss_db),
            reflectance_db=_draw(rng, r.dirty_reflectance_db),
        )
    if label == LABEL_FIBER_CUT:
        return EventSpec(KIND_FIBER_CUT, position_m)
    raise ValueError(f"not a fault label: {label!r}")


def make_sequence(
    cfg: GenConfig,
    rng: np.random.Generator,
    label: str,
    gamma_db: float | None = None,
    fault_index: int | None = None,
    trace_id: str = "",
) -> Sequence:
    """One labeled window produced through the trace pipeline."""
    if gamma_db is None:
        gamma_db = _draw(rng, cfg.snr_range_db)
    spacing = cfg.sample_spacing_m
    events: tuple[EventSpec, ...] = ()
    if label != LABEL_NORMAL:
        if fault_index is None:
            fault_index = int(rng.integers(0, 30))
        events = (_fault_event(cfg, rng, label, (cfg.window_offset + fault_index) * spacing),)
    plan = FiberPlan(
        length_m=cfg.trace_samples * spacing,
        attenuation_db_per_km=cfg.attenuation_db_per_km,
        launch_power_db=cfg.launch_power_db,
        sample_spacing_m=spacing,
        events=events,
        noise_floor_db=cfg.noise_floor_db,
    )
    trace = inject_noise(
        build_trace(plan), gamma_db, seed=int(rng.integers(2**62)), floor_db=cfg.noise_floor_db
    )
    window = next(
        s
        for s in segment(trace, stride=cfg.window_offset, trace_id=trace_id)
        if s.source[1] == cfg.window_offset
    )
    if window.label != label or (fault_index is not None and window.fault_index != fault_index):
        raise RuntimeError(
            f"generator produced label {window.label!r}@{window.fault_index}, "
            f"wanted {label!r}@{fault_index}"
        )
    return window


def _balanced_labels(rng: np.random.Generator, labels: tuple[str, ...], n: int) -> list[str]:
    """n labels with equal counts (remainder spread deterministically), shuffled."""
    base, extra = divmod(n, len(labels))
    counts = [base + (1 if i < extra else 0) for i in range(len(labels))]
    out = [label for label, c in zip(labels, counts) for _ in range(c)]
    return [out[i] for i in rng.permutation(n)]


def _make_many(cfg: GenConfig, rng: np.random.Generator, labels: list[str], tag: str) -> list[Sequence]:
    return [
        make_sequence(cfg, rng, label, trace_id=f"{tag}-{i:06d}")
        for i, label in enumerate(labels)
    ]


def generate_detection_dataset(
    cfg: GenConfig,
    total: int,
    fault_fraction: float = 0.5,
    train_fraction: float = 0.6,
    val_fraction: float = 0.1,
) -> DatasetSplit:
    """Detector dataset: normal-only train; mixed validation and test.

    The validation split exists for threshold calibration, which needs both
    classes; train-to-test sizes keep the 70/30 proportion.
    """
    rng = np.random.default_rng(cfg.seed)
    n_train = int(round(train_fraction * total))
    n_val = int(round(val_fraction * total))
    n_test = total - n_train - n_val
    train = _make_many(cfg, rng, [LABEL_NORMAL] * n_train, "ae-train")
    val = _make_many(cfg, rng, _mixed_labels(rng, n_val, fault_fraction), "ae-val")
    test = _make_many(cfg, rng, _mixed_labels(rng, n_test, fault_fraction), "ae-test")
    return DatasetSplit(
        train=train,
        validation=val,
        test=test,
        seed=cfg.seed,
        fractions=(train_fraction, val_fraction, round(1.0 - train_fraction - val_fraction, 12)),
    )


def _mixed_labels(rng: np.random.Generator, n: int, fault_fraction: float) -> list[str]:
    n_fault = int(round(fault_fraction * n))
    labels = [LABEL_NORMAL] * (n - n_fault) + _balanced_labels(rng, FAULT_LABELS, n_fault)
    return [labels[i] for i in rng.permutation(n)]


def generate_diagnosis_dataset(
    cfg: GenConfig,
    total: int,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> DatasetSplit:
    """Fault-only dataset, class-balanced, split 60/20/20 by default."""
    rng = np.random.default_rng(cfg.seed)
    sizes = _split_sizes(total, fractions)
    parts = [
        _make_many(cfg, rng, _balanced_labels(rng, FAULT_LABELS, size), f"diag-{name}")
        for name, size in zip(("train", "val", "test"), sizes)
    ]
    return DatasetSplit(
        train=parts[0], validation=parts[1], test=parts[2], seed=cfg.seed, fractions=fractions
    )


def generate_flat_dataset(
    cfg: GenConfig,
    total: int,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> DatasetSplit:
    """Five-class dataset (normal included) for the flat-model comparison."""
    labels = (LABEL_NORMAL,) + FAULT_LABELS
    rng = np.random.default_rng(cfg.seed)
    sizes = _split_sizes(total, fractions)
    parts = [
        _make_many(cfg, rng, _balanced_labels(rng, labels, size), f"flat-{name}")
        for name, size in zip(("train", "val", "test"), sizes)
    ]
    return DatasetSplit(
        train=parts[0], validation=parts[1], test=parts[2], seed=cfg.seed, fractions=fractions
    )


def _split_sizes(total: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * total))
    n_val = int(round(fractions[1] * total))
    return n_train, n_val, total - n_train - n_val


@dataclass
class MonitorTruth:
    """Ground truth of one generated monitoring trace."""

    trace_id: str
    label: str  # normal for clean traces
    fault_index: int | None
    fault_distance_m: float | None
    gamma_db: float


def make_monitor_trace(
    cfg: GenConfig,
    rng: np.random.Generator,
    trace_id: str,
    label: str,
    trace_samples: int,
    gamma_db: float,
) -> tuple[OtdrTrace, MonitorTruth]:
    """A full-span trace with at most one fault, for end-to-end monitoring."""
    spacing = cfg.sample_spacing_m
    events: tuple[EventSpec, ...] = ()
    fault_index: int | None = None
    if label != LABEL_NORMAL:
        margin = 2 * DEFAULT_PULSE_WIDTH_SAMPLES + 30
        fault_index = int(rng.integers(margin, trace_samples - margin))
        events = (_fault_event(cfg, rng, label, fault_index * spacing),)
    plan = FiberPlan(
        length_m=trace_samples * spacing,
        attenuation_db_per_km=cfg.attenuation_db_per_km,
        launch_power_db=cfg.launch_power_db,
        sample_spacing_m=spacing,
        events=events,
        noise_floor_db=cfg.noise_floor_db,
    )
    trace = inject_noise(
        build_trace(plan), gamma_db, seed=int(rng.integers(2**62)), floor_db=cfg.noise_floor_db
    )
    truth = MonitorTruth(
        trace_id=trace_id,
        label=label,
        fault_index=fault_index,
        fault_distance_m=None if fault_index is None else fault_index * spacing,
        gamma_db=gamma_db,
    )
    return trace, truth
