"""Synthetic OTDR trace generation.

A trace is the two-way Rayleigh backscatter level in dB versus distance:
a linear ramp of slope -2 * attenuation, with event signatures superimposed.
Loss-only events add a downward step from their sample index on; reflective
events additionally add a rectangular peak one pulse width wide; a fiber cut
drops everything from its index to the noise floor.

Noise is Gaussian in the linear-power domain. The applied standard deviation
is calibrated (via truncated-Gaussian moments) so that the residual variance
of the stored, power-floored trace matches the requested signal-to-noise
ratio on the pre-cut region.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

SPEED_OF_LIGHT_M_S = 299792458.0
DEFAULT_GROUP_INDEX = 1.468
DEFAULT_SAMPLING_INTERVAL_S = 1e-9
DEFAULT_PULSE_WIDTH_SAMPLES = 10

# Reflective peaks rise above the backscatter level by roughly
# (reflectance - backscatter reference); the reference is the backscatter
# level relative to the probe pulse for this pulse width.
DEFAULT_BACKSCATTER_REFERENCE_DB = -55.0
DEFAULT_PEAK_SATURATION_DB = 25.0

KIND_CONNECTOR = "connector"
KIND_REFLECTOR = "reflector"
KIND_SPLITTER = "splitter"
KIND_TAPPING = "tapping"
KIND_BAD_SPLICE = "bad_splice"
KIND_DIRTY_CONNECTOR = "dirty_connector"
KIND_FIBER_CUT = "fiber_cut"

EVENT_KINDS = (
    KIND_CONNECTOR,
    KIND_REFLECTOR,
    KIND_SPLITTER,
    KIND_TAPPING,
    KIND_BAD_SPLICE,
    KIND_DIRTY_CONNECTOR,
    KIND_FIBER_CUT,
)
REFLECTIVE_KINDS = frozenset({KIND_CONNECTOR, KIND_REFLECTOR, KIND_DIRTY_CONNECTOR})
# Event kinds considered faults; the rest model normal optical components.
FAULT_KINDS = frozenset({KIND_TAPPING, KIND_BAD_SPLICE, KIND_DIRTY_CONNECTOR, KIND_FIBER_CUT})

TAPPING_RADIUS_RANGE_MM = (2.5, 10.0)


class TraceFormatError(ValueError):
    """Raised for malformed trace or plan files."""


def default_sample_spacing(
    sampling_interval_s: float = DEFAULT_SAMPLING_INTERVAL_S,
    group_index: float = DEFAULT_GROUP_INDEX,
) -> float:
    """Meters of fiber per sample for a given sampling interval: c*dt/(2*n_g)."""
    return SPEED_OF_LIGHT_M_S * sampling_interval_s / (2.0 * group_index)


def index_to_distance(index: float, sample_spacing_m: float) -> float:
    """Distance along the fiber of a (possibly fractional) sample index."""
    if index < 0:
        raise ValueError("sample index must be nonnegative")
    return index * sample_spacing_m


def tapping_loss_db(
    bend_radius_mm: float,
    k_db_mm: float = 2.5,
    min_db: float = 0.02,
    max_db: float = 2.0,
) -> float:
    """Bend-loss model for a clip-on coupler: clamp(k / radius, min, max).

    Smaller bend radii leak more light. The curve is a documented knob; the
    defaults are deliberately conservative.
    """
    if bend_radius_mm <= 0:
        raise ValueError("bend radius must be positive")
    return float(np.clip(k_db_mm / bend_radius_mm, min_db, max_db))


@dataclass(frozen=True)
class EventSpec:
    """One event on the fiber: kind, position, and its signature parameters."""

    kind: str
    position_m: float
    loss_db: float = 0.0
    reflectance_db: float | None = None
    bend_radius_mm: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {self.kind!r}")
        if not math.isfinite(self.loss_db) or self.loss_db < 0:
            raise ValueError(f"{self.kind}: loss_db must be finite and >= 0")
        if self.kind in REFLECTIVE_KINDS:
            if self.reflectance_db is None:
                raise ValueError(f"{self.kind}: reflectance_db required")
            if self.reflectance_db >= 0:
                raise ValueError(f"{self.kind}: reflectance_db must be < 0")
        elif self.reflectance_db is not None:
            raise ValueError(f"{self.kind}: reflectance_db only valid for reflective kinds")
        if self.kind == KIND_TAPPING:
            if self.bend_radius_mm is None:
                raise ValueError("tapping: bend_radius_mm required")
            lo, hi = TAPPING_RADIUS_RANGE_MM
            if not (lo <= self.bend_radius_mm <= hi):
                raise ValueError(f"tapping: bend_radius_mm must be in [{lo}, {hi}]")
        elif self.bend_radius_mm is not None:
            raise ValueError(f"{self.kind}: bend_radius_mm only valid for tapping")

    @staticmethod
    def tapping(
        position_m: float,
        bend_radius_mm: float,
        k_db_mm: float = 2.5,
        min_db: float = 0.02,
        max_db: float = 2.0,
    ) -> "EventSpec":
        """Tapping event with loss derived from the bend radius."""
        return EventSpec(
            KIND_TAPPING,
            position_m,
            loss_db=tapping_loss_db(bend_radius_mm, k_db_mm, min_db, max_db),
            bend_radius_mm=bend_radius_mm,
        )


@dataclass(frozen=True)
class FiberPlan:
    """Geometry, loss budget, and event list of one simulated fiber."""

    length_m: float
    attenuation_db_per_km: float = 0.2
    launch_power_db: float = 0.0
    sample_spacing_m: float = field(default_factory=default_sample_spacing)
    events: tuple[EventSpec, ...] = ()
    noise_floor_db: float = -40.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        if self.length_m <= 0:
            raise ValueError("length_m must be positive")
        if self.sample_spacing_m <= 0:
            raise ValueError("sample_spacing_m must be positive")
        positions = [e.position_m for e in self.events]
        if any(not (0.0 < p < self.length_m) for p in positions):
            raise ValueError("event positions must lie strictly inside (0, length_m)")
        if positions != sorted(positions):
            raise ValueError("events must be sorted by position")
        cuts = [e for e in self.events if e.kind == KIND_FIBER_CUT]
        if len(cuts) > 1:
            raise ValueError("at most one fiber cut per plan")
        if cuts and self.events[-1].kind != KIND_FIBER_CUT:
            raise ValueError("no event may lie beyond a fiber cut")

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.length_m / self.sample_spacing_m)) + 1


@dataclass
class OtdrTrace:
    """A sampled backscatter curve with ground-truth event annotations.

    ``snr_db`` is None while the trace is noiseless. Annotations map each
    event kind to the first sample index its signature affects.
    """

    samples_db: np.ndarray
    sample_spacing_m: float
    snr_db: float | None = None
    annotations: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.samples_db = np.asarray(self.samples_db, dtype=np.float64)
        if not np.all(np.isfinite(self.samples_db)):
            raise ValueError("trace samples must be finite")
        n = len(self.samples_db)
        for kind, idx in self.annotations:
            if kind not in EVENT_KINDS:
                raise ValueError(f"unknown annotation kind: {kind!r}")
            if not (0 <= idx < n):
                raise ValueError(f"annotation index {idx} out of bounds [0, {n})")

    @property
    def is_noiseless(self) -> bool:
        return self.snr_db is None

    def cut_index(self) -> int | None:
        for kind, idx in self.annotations:
            if kind == KIND_FIBER_CUT:
                return idx
        return None


def build_trace(
    plan: FiberPlan,
    pulse_width_samples: int = DEFAULT_PULSE_WIDTH_SAMPLES,
    backscatter_reference_db: float = DEFAULT_BACKSCATTER_REFERENCE_DB,
    peak_saturation_db: float = DEFAULT_PEAK_SATURATION_DB,
) -> OtdrTrace:
    """Render the noiseless trace for a plan.

    Events whose sample indices fall within one pulse width of each other are
    rejected: merged signatures are not modeled.
    """
    n = plan.n_samples
    spacing = plan.sample_spacing_m
    distances = np.arange(n) * spacing
    samples = plan.launch_power_db - 2.0 * plan.attenuation_db_per_km * distances / 1000.0

    indices = [int(round(e.position_m / spacing)) for e in plan.events]
    for (i_a, e_a), (i_b, e_b) in zip(
        zip(indices, plan.events), zip(indices[1:], plan.events[1:])
    ):
        if i_b - i_a < pulse_width_samples:
            raise ValueError(
                f"events {e_a.kind}@{e_a.position_m:.2f}m and "
                f"{e_b.kind}@{e_b.position_m:.2f}m overlap within one pulse width "
                f"({pulse_width_samples} samples)"
            )

    annotations: list[tuple[str, int]] = []
    for idx, event in zip(indices, plan.events):
        annotations.append((event.kind, idx))
        if event.kind == KIND_FIBER_CUT:
            samples[idx:] = plan.noise_floor_db
            continue
        samples[idx:] -= event.loss_db
        if event.kind in REFLECTIVE_KINDS:
            height = float(
                np.clip(event.reflectance_db - backscatter_reference_db, 0.0, peak_saturation_db)
            )
            samples[idx : min(n, idx + pulse_width_samples)] += height

    return OtdrTrace(
        samples_db=samples,
        sample_spacing_m=spacing,
        snr_db=None,
        annotations=annotations,
    )


def _folded_noise_scale(p_clean: np.ndarray, target_var: float) -> float:
    """Noise std whose post-rectification residual variance equals target_var.

    Measured power is a magnitude, so the stored value is |p + s*n|. With
    a = -p/s the residual r = |p + s*n| - p satisfies
    E[r^2] = s^2 * g(a), g(a) = 1 + 4*a^2*Phi(a) + 4*a*phi(a),
    and g -> 1 when rectification is negligible. Solved for s by bisection.
    """
    if target_var <= 0:
        return 0.0

    def expected_var(s: float) -> float:
        a = -p_clean / s
        phi = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
        g = 1.0 + 4.0 * a * a * ndtr(a) + 4.0 * a * phi
        return s * s * float(np.mean(g))

    s0 = math.sqrt(target_var)
    if float(p_clean.min()) > 7.0 * s0:
        return s0  # rectification probability < 1e-11: no correction needed
    # g <= 1 for nonnegative signals, so s0 always brackets from below.
    lo, hi = s0, 2.0 * s0
    while expected_var(hi) < target_var and hi < s0 * 1e9:
        hi *= 2.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if expected_var(mid) < target_var:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def inject_noise(
    trace: OtdrTrace,
    target_snr_db: float | None,
    seed: int,
    floor_db: float | None = None,
) -> OtdrTrace:
    """Additive Gaussian noise in linear power, deterministic for a seed.

    The SNR is signal power over noise variance (linear domain) on the
    pre-cut region. The detector reads a magnitude, so the stored power is
    |p + noise| clamped at ``floor_db`` (default: 90 dB below the trace
    peak). ``None`` (or +inf) as the target leaves the trace untouched.
    """
    if not trace.is_noiseless:
        raise ValueError("trace already carries noise; re-noising is not supported")
    if target_snr_db is None or target_snr_db == math.inf:
        return replace(trace, samples_db=trace.samples_db.copy(), annotations=list(trace.annotations))
    if not math.isfinite(target_snr_db):
        raise ValueError("target SNR must be finite (or the noiseless sentinel)")

    p = np.power(10.0, trace.samples_db / 10.0)
    cut = trace.cut_index()
    pre = p[:cut] if cut is not None else p
    signal_power = float(np.mean(pre * pre))
    target_var = signal_power / 10.0 ** (target_snr_db / 10.0)
    sigma = _folded_noise_scale(pre, target_var)
    if floor_db is None:
        floor_lin = 1e-9 * float(np.max(p))
    else:
        floor_lin = 10.0 ** (floor_db / 10.0)
    noise = np.random.default_rng(seed).standard_normal(len(p)) * sigma
    noisy = np.maximum(np.abs(p + noise), floor_lin)
    return OtdrTrace(
        samples_db=10.0 * np.log10(noisy),
        sample_spacing_m=trace.sample_spacing_m,
        snr_db=float(target_snr_db),
        annotations=list(trace.annotations),
    )


def measure_snr_db(noisy: OtdrTrace, clean: OtdrTrace) -> float:
    """Realized SNR from the (noisy - clean) residual on the pre-cut region."""
    p_clean = np.power(10.0, clean.samples_db / 10.0)
    p_noisy = np.power(10.0, noisy.samples_db / 10.0)
    cut = clean.cut_index()
    if cut is not None:
        p_clean, p_noisy = p_clean[:cut], p_noisy[:cut]
    resid = p_noisy - p_clean
    return 10.0 * math.log10(float(np.mean(p_clean * p_clean)) / float(np.mean(resid * resid)))


# --- file formats -----------------------------------------------------------

def trace_to_dict(trace: OtdrTrace) -> dict:
    return {
        "samples_db": [float(v) for v in trace.samples_db],
        "sample_spacing_m": trace.sample_spacing_m,
        "snr_db": "noiseless" if trace.snr_db is None else trace.snr_db,
        "annotations": [[kind, idx] for kind, idx in trace.annotations],
    }


def trace_from_dict(d: dict) -> OtdrTrace:
    try:
        snr = d["snr_db"]
        return OtdrTrace(
            samples_db=np.asarray(d["samples_db"], dtype=np.float64),
            sample_spacing_m=float(d["sample_spacing_m"]),
            snr_db=None if snr == "noiseless" else float(snr),
            annotations=[(str(k), int(i)) for k, i in d["annotations"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed trace record: {exc}") from exc


def write_trace(trace: OtdrTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(trace_to_dict(trace), f)
        f.write("\n")


def read_trace(path: str) -> OtdrTrace:
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}: invalid JSON ({exc})") from exc
    return trace_from_dict(payload)


def plan_to_dict(plan: FiberPlan) -> dict:
    events = []
    for e in plan.events:
        record: dict = {"kind": e.kind, "position_m": e.position_m, "loss_db": e.loss_db}
        if e.reflectance_db is not None:
            record["reflectance_db"] = e.reflectance_db
        if e.bend_radius_mm is not None:
            record["bend_radius_mm"] = e.bend_radius_mm
        events.append(record)
    return {
        "length_m": plan.length_m,
        "attenuation_db_per_km": plan.attenuation_db_per_km,
        "launch_power_db": plan.launch_power_db,
        "sample_spacing_m": plan.sample_spacing_m,
        "noise_floor_db": plan.noise_floor_db,
        "events": events,
    }


def plan_from_dict(d: dict) -> FiberPlan:
    try:
        events = tuple(
            EventSpec(
                kind=str(e["kind"]),
                position_m=float(e["position_m"]),
                loss_db=float(e.get("loss_db", 0.0)),
                reflectance_db=(
                    float(e["reflectance_db"]) if "reflectance_db" in e else None
                ),
                bend_radius_mm=(
                    float(e["bend_radius_mm"]) if "bend_radius_mm" in e else None
                ),
            )
            for e in d.get("events", [])
        )
        return FiberPlan(
            length_m=float(d["length_m"]),
            attenuation_db_per_km=float(d.get("attenuation_db_per_km", 0.2)),
            launch_power_db=float(d.get("launch_power_db", 0.0)),
            sample_spacing_m=float(d.get("sample_spacing_m", default_sample_spacing())),
            events=events,
            noise_floor_db=float(d.get("noise_floor_db", -40.0)),
        )
    except (KeyError, TypeError) as exc:
        raise TraceFormatError(f"malformed plan record: {exc}") from exc


def read_plan(path: str) -> FiberPlan:
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}: invalid JSON ({exc})") from exc
    return plan_from_dict(payload)


def write_plan(plan: FiberPlan, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(plan_to_dict(plan), f)
        f.write("\n")
