"""Recurrent autoencoder anomaly detection.

The model is trained on normal windows only. Its reconstruction error is the
anomaly score; a detection threshold is calibrated on a mixed validation set
by maximizing F1, and detection is a strict greater-than test against it.

Architecture: encoder GRU stack (64 then 32 cells), the final hidden state
projected through an ELU bottleneck, repeated across all input steps, decoded
by the mirror GRU stack (32 then 64) and a per-step linear readout. The input
is the 30 normalized window values plus the normalized SNR tag as step 31.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import LABEL_NORMAL, Sequence, normalized_gamma
from .nn import (
    Adam,
    Dense,
    GruLayer,
    ModelFormatError,
    Param,
    assign_params,
    load_params,
    mse_grad,
    mse_loss,
    save_params,
)
from .nn.layers import DEFAULT_MERGE

MODEL_KIND_GRU_AE = "gru-ae/v1"
INPUT_STEPS = 31


@dataclass
class GruAeArch:
    """Layer widths; the decoder mirrors the encoder.

    ``latent_dim`` is the width of the bottleneck projection between the
    encoder's final state and the repeated decoder input. A narrow bottleneck
    is what makes reconstruction error discriminative: it admits the few
    degrees of freedom of a quiet window but cannot carry the position and
    shape of event signatures.
    """

    input_steps: int = INPUT_STEPS
    encoder_hidden: tuple[int, int] = (64, 32)
    latent_dim: int = 6
    merge: str = DEFAULT_MERGE

    def __post_init__(self) -> None:
        if self.input_steps < 1:
            raise ValueError("input_steps must be >= 1")
        if len(self.encoder_hidden) != 2:
            raise ValueError("expected two encoder layers")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")

    @property
    def decoder_hidden(self) -> tuple[int, int]:
        return tuple(reversed(self.encoder_hidden))


class GruAutoencoder:
    """Sequence autoencoder scoring inputs by reconstruction error."""

    def __init__(self, arch: GruAeArch, seed: int):
        self.arch = arch
        self.seed = seed
        rng = np.random.default_rng(seed)
        h1, h2 = arch.encoder_hidden
        d1, d2 = arch.decoder_hidden
        m = arch.merge
        self.enc1 = GruLayer(1, h1, rng, name="enc1", merge=m)
        self.enc2 = GruLayer(h1, h2, rng, name="enc2", merge=m)
        self.latent = Dense(h2, arch.latent_dim, "elu", rng, name="latent")
        # Decoder input = repeated latent plus a marker on the final step (the
        # SNR-tag slot). The marker carries nothing about the input; it only
        # spares the decoder from having to count steps to place that value.
        self.dec1 = GruLayer(arch.latent_dim + 1, d1, rng, name="dec1", merge=m)
        self.dec2 = GruLayer(d1, d2, rng, name="dec2", merge=m)
        self.readout = Dense(d2, 1, "identity", rng, name="readout")
        self._layers = [self.enc1, self.enc2, self.latent, self.dec1, self.dec2, self.readout]
        self._cache: dict | None = None

    def params(self) -> list[Param]:
        out: list[Param] = []
        for layer in self._layers:
            out.extend(layer.params())
        return out

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Reconstruct a batch of inputs, shape (batch, input_steps)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        B, T = x.shape
        if T != self.arch.input_steps:
            raise ValueError(f"expected {self.arch.input_steps} steps, got {T}")
        h1 = self.enc1.forward(x[:, :, None])
        h2 = self.enc2.forward(h1)
        z = self.latent.forward(h2[:, -1])
        dec_in = np.zeros((B, T, z.shape[1] + 1))
        dec_in[:, :, :-1] = z[:, None, :]
        dec_in[:, -1, -1] = 1.0
        d1 = self.dec1.forward(dec_in)
        d2 = self.dec2.forward(d1)
        x_hat = self.readout.forward(d2)[..., 0]
        self._cache = {"shape": (B, T)}
        return x_hat

    def backward(self, dx_hat: np.ndarray) -> None:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        B, T = self._cache["shape"]
        dd2 = self.readout.backward(dx_hat[..., None])
        dd1 = self.dec2.backward(dd2)
        ddec_in = self.dec1.backward(dd1)
        dz = ddec_in[:, :, :-1].sum(axis=1)
        dh_last = self.latent.backward(dz)
        dh2 = np.zeros((B, T, self.arch.encoder_hidden[1]))
        dh2[:, -1] = dh_last
        dh1 = self.enc2.backward(dh2)
        self.enc1.backward(dh1)

    def save(self, path: str, seed: int | None = None) -> None:
        save_params(
            path,
            MODEL_KIND_GRU_AE,
            self.params(),
            {
                "merge_convention": self.arch.merge,
                "seed": self.seed if seed is None else seed,
                "architecture": {
                    "input_steps": self.arch.input_steps,
                    "encoder_hidden": list(self.arch.encoder_hidden),
                    "latent_dim": self.arch.latent_dim,
                },
                "layers": [
                    {"name": "enc1", "kind": "gru"},
                    {"name": "enc2", "kind": "gru"},
                    {"name": "latent", "kind": "dense", "activation": "elu"},
                    {"name": "dec1", "kind": "gru"},
                    {"name": "dec2", "kind": "gru"},
                    {"name": "readout", "kind": "dense", "activation": "identity"},
                ],
            },
        )

    @staticmethod
    def load(path: str) -> "GruAutoencoder":
        manifest, tensors = load_params(path)
        if manifest.get("model_kind") != MODEL_KIND_GRU_AE:
            raise ModelFormatError(
                f"{path}: model kind {manifest.get('model_kind')!r}, expected {MODEL_KIND_GRU_AE!r}"
            )
        arch_d = manifest["architecture"]
        arch = GruAeArch(
            input_steps=int(arch_d["input_steps"]),
            encoder_hidden=tuple(arch_d["encoder_hidden"]),
            latent_dim=int(arch_d.get("latent_dim", 6)),
            merge=manifest.get("merge_convention", DEFAULT_MERGE),
        )
        model = GruAutoencoder(arch, seed=int(manifest.get("seed", 0)))
        assign_params(model.params(), tensors)
        return model


def encode_input(seq: Sequence) -> np.ndarray:
    """Model input: the 30 normalized values plus normalized gamma as step 31."""
    return np.asarray(list(seq.values) + [normalized_gamma(seq.gamma_db)], dtype=np.float64)


def encode_batch(seqs: list[Sequence]) -> np.ndarray:
    out = np.empty((len(seqs), INPUT_STEPS))
    for i, seq in enumerate(seqs):
        out[i, :30] = seq.values
        out[i, 30] = normalized_gamma(seq.gamma_db)
    return out


@dataclass
class TrainConfig:
    """Knobs of the gradient-descent loop."""

    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf

    def rows(self) -> list[tuple[int, float, float]]:
        return [(e["epoch"], e["train_loss"], e["val_loss"]) for e in self.epochs]


def train_ae(
    train_sequences: list[Sequence], config: TrainConfig
) -> tuple[GruAutoencoder, TrainHistory]:
    """Train the autoencoder on normal windows only.

    A held-out fraction of the input drives early stopping; the parameters of
    the best-validation epoch are restored at the end. Any non-normal input
    sequence is a contract violation and raises.
    """
    bad = [s for s in train_sequences if s.label != LABEL_NORMAL]
    if bad:
        raise ValueError(
            f"autoencoder training requires normal sequences only; got {len(bad)} fault-labeled"
        )
    if not train_sequences:
        raise ValueError("empty training set")
    x = encode_batch(train_sequences)
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(x))
    n_val = max(1, int(round(config.val_fraction * len(x))))
    if n_val >= len(x):
        raise ValueError("validation fraction leaves no training data")
    val_x = x[perm[:n_val]]
    train_x = x[perm[n_val:]]

    model = GruAutoencoder(GruAeArch(), seed=config.seed)
    adam = Adam(model.params(), learning_rate=config.learning_rate)
    history = TrainHistory()
    best_params: list[np.ndarray] | None = None
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_x))
        total = 0.0
        for start in range(0, len(train_x), config.batch_size):
            batch = train_x[order[start : start + config.batch_size]]
            model.zero_grads()
            x_hat = model.forward(batch)
            loss = mse_loss(batch, x_hat)
            model.backward(mse_grad(batch, x_hat))
            adam.step()
            total += loss * len(batch)
        train_loss = total / len(train_x)
        val_loss = _batched_recon_loss(model, val_x, config.batch_size)
        history.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_params = [p.value.copy() for p in model.params()]
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    if best_params is not None:
        for p, v in zip(model.params(), best_params):
            p.value[...] = v
    return model, history


def _batched_recon_loss(model: GruAutoencoder, x: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        batch = x[start : start + batch_size]
        x_hat = model.forward(batch)
        total += mse_loss(batch, x_hat) * len(batch)
    return total / len(x)


def anomaly_score(model: GruAutoencoder, seq: Sequence) -> float:
    """Mean squared reconstruction error over all input steps."""
    x = encode_input(seq)[None, :]
    x_hat = model.forward(x)
    return float(np.mean((x - x_hat) ** 2))


def score_batch(model: GruAutoencoder, seqs: list[Sequence], batch_size: int = 256) -> np.ndarray:
    x = encode_batch(seqs)
    scores = np.empty(len(x))
    for start in range(0, len(x), batch_size):
        batch = x[start : start + batch_size]
        x_hat = model.forward(batch)
        scores[start : start + len(batch)] = np.mean((batch - x_hat) ** 2, axis=1)
    return scores


@dataclass
class DetectionThreshold:
    """Calibrated decision threshold with its validation operating point."""

    theta: float
    f1: float
    precision: float
    recall: float
    calibrated_at_seed: int = 0

    def __post_init__(self) -> None:
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")


def best_f1_threshold(
    scores: np.ndarray, is_fault: np.ndarray
) -> tuple[float, float, float, float]:
    """Sweep midpoints of sorted unique scores; return (theta, f1, p, r).

    Classification is strictly score > theta. Ties on F1 break toward the
    larger threshold (fewer false alarms).
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_fault = np.asarray(is_fault).astype(bool)
    if is_fault.all() or not is_fault.any():
        raise ValueError("calibration requires both classes")
    uniq = np.unique(scores)
    if len(uniq) < 2:
        raise ValueError("calibration requires at least two distinct scores")
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_fault = is_fault[order]
    n_pos = int(is_fault.sum())
    # Predictions at threshold t: everything with score > t. Walking the sorted
    # scores gives cumulative negatives-below and positives-below per midpoint.
    pos_below = np.cumsum(sorted_fault)
    cut = np.searchsorted(sorted_scores, mids, side="right")
    fn = pos_below[cut - 1]
    tp = n_pos - fn
    predicted_pos = len(scores) - cut
    fp = predicted_pos - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = tp / n_pos
        pr_sum = precision + recall
        f1 = np.where(pr_sum > 0, 2.0 * precision * recall / pr_sum, 0.0)
    best = float(np.max(f1))
    best_idx = int(np.max(np.nonzero(f1 == best)[0]))  # tie -> larger theta
    return float(mids[best_idx]), best, float(precision[best_idx]), float(recall[best_idx])


def calibrate_threshold(
    model: GruAutoencoder, validation: list[Sequence], seed: int = 0
) -> DetectionThreshold:
    """Pick the reconstruction-error threshold maximizing F1 on mixed data."""
    labels = np.array([s.label != LABEL_NORMAL for s in validation])
    if labels.all() or not labels.any():
        raise ValueError("calibration requires both normal and fault sequences")
    scores = score_batch(model, validation)
    theta, f1, precision, recall = best_f1_threshold(scores, labels)
    return DetectionThreshold(
        theta=theta, f1=f1, precision=precision, recall=recall, calibrated_at_seed=seed
    )


VERDICT_NORMAL = "normal"
VERDICT_ANOMALOUS = "anomalous"


def detect(
    model: GruAutoencoder, threshold: DetectionThreshold, seq: Sequence
) -> tuple[str, float]:
    """Strict greater-than comparison of the anomaly score against theta."""
    score = anomaly_score(model, seq)
    return (VERDICT_ANOMALOUS if score > threshold.theta else VERDICT_NORMAL, score)


def write_threshold(threshold: DetectionThreshold, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "theta": threshold.theta,
                "f1": threshold.f1,
                "precision": threshold.precision,
                "recall": threshold.recall,
                "calibrated_at_seed": threshold.calibrated_at_seed,
            },
            f,
            indent=2,
        )
        f.write("\n")


def read_threshold(path: str) -> DetectionThreshold:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return DetectionThreshold(
        theta=float(d["theta"]),
        f1=float(d["f1"]),
        precision=float(d["precision"]),
        recall=float(d["recall"]),
        calibrated_at_seed=int(d.get("calibrated_at_seed", 0)),
    )
