"""Run configuration: one JSON document, overridable by CLI flags (flags win).

The seed is mandatory so every artifact is reproducible; there is no
wall-clock default anywhere.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .generator import EventRanges, GenConfig


class ConfigError(ValueError):
    """Raised for unusable run configurations."""


@dataclass
class RunConfig:
    seed: int
    out_dir: str = "fiberwatch-out"
    # Dataset sizes.
    ae_size: int = 48000
    ae_fault_fraction: float = 0.5
    diag_size: int = 62000
    flat_size: int = 30000
    # Training.
    ae_epochs: int = 60
    diag_epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    patience: int = 10
    val_fraction: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    # Monitoring.
    stride: int = 15
    generator: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self) -> None:
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        self.generator = dataclasses.replace(self.generator, seed=self.seed)

    # Artifact paths, all under out_dir.
    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    @property
    def ae_dataset_path(self) -> str:
        return self.path("datasets", "ae.jsonl")

    @property
    def diag_dataset_path(self) -> str:
        return self.path("datasets", "diag.jsonl")

    @property
    def flat_dataset_path(self) -> str:
        return self.path("datasets", "flat.jsonl")

    @property
    def ae_model_path(self) -> str:
        return self.path("models", "gru_ae.fwnn")

    @property
    def threshold_path(self) -> str:
        return self.path("models", "threshold.json")

    @property
    def diag_model_path(self) -> str:
        return self.path("models", "abigru.fwnn")

    @property
    def flat_model_path(self) -> str:
        return self.path("models", "bigru_flat.fwnn")

    @property
    def report_dir(self) -> str:
        return self.path("reports")


_SCALAR_FIELDS = {
    f.name
    for f in dataclasses.fields(RunConfig)
    if f.name not in ("generator",)
}


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flag overrides."""
    payload: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    merged = dict(payload)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    unknown = set(merged) - _SCALAR_FIELDS - {"generator"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in merged:
        raise ConfigError("seed is mandatory (set it in the config file or pass --seed)")
    gen_payload = merged.pop("generator", {})
    try:
        generator = _gen_config_from_dict(gen_payload)
        return RunConfig(generator=generator, **merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _gen_config_from_dict(d: dict) -> GenConfig:
    if not isinstance(d, dict):
        raise ConfigError("generator section must be an object")
    ranges_payload = d.pop("event_ranges", {})
    range_fields = {f.name for f in dataclasses.fields(EventRanges)}
    unknown = set(ranges_payload) - range_fields
    if unknown:
        raise ConfigError(f"unknown event_ranges keys: {sorted(unknown)}")
    ranges = EventRanges(
        **{k: tuple(v) if isinstance(v, list) else v for k, v in ranges_payload.items()}
    )
    gen_fields = {f.name for f in dataclasses.fields(GenConfig)} - {"ranges", "seed"}
    unknown = set(d) - gen_fields
    if unknown:
        raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return GenConfig(ranges=ranges, **kwargs)
