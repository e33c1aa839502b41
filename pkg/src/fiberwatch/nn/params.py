"""Named parameter tensors, seeded initialization, and the on-disk container.

File layout: magic line, 8-byte little-endian manifest length, UTF-8 JSON
manifest, then the raw tensor data as little-endian float64 in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FWNN1\n"
FORMAT_NAME = "fw-params"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for unreadable or incompatible parameter files."""


@dataclass
class Param:
    """One trainable tensor with its gradient slot."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def save_params(path: str, model_kind: str, params: list[Param], manifest_extra: dict) -> None:
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model_kind": model_kind,
        "tensors": [{"name": p.name, "shape": list(p.value.shape)} for p in params],
    }
    manifest.update(manifest_extra)
    body = json.dumps(manifest, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(body)))
        f.write(body)
        for p in params:
            f.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_params(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (manifest, tensors by name)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: not a parameter file (bad magic)")
        (length,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(length).decode("utf-8"))
        if manifest.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"{path}: unexpected format {manifest.get('format')!r}")
        if manifest.get("version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"{path}: version {manifest.get('version')!r}, expected {FORMAT_VERSION}"
            )
        tensors: dict[str, np.ndarray] = {}
        for spec in manifest["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ModelFormatError(f"{path}: truncated tensor {spec['name']!r}")
            tensors[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return manifest, tensors


def assign_params(params: list[Param], tensors: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in tensors:
            raise ModelFormatError(f"missing tensor {p.name!r}")
        t = tensors[p.name]
        if t.shape != p.value.shape:
            raise ModelFormatError(
                f"tensor {p.name!r} has shape {t.shape}, expected {p.value.shape}"
            )
        p.value[...] = t
