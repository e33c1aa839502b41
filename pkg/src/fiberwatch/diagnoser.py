"""Attention-based bidirectional GRU multitask model: fault classification
(task 1) and in-window fault-index regression (task 2) over a shared trunk.

The trunk is two BiGRU layers (64 then 32 cells) followed by additive
attention over the per-step features; the context vector feeds both heads
directly. A flat variant widens the classification head to five classes
(normal included) and masks the regression loss on normal rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import ALL_LABELS, FAULT_LABELS, LABEL_NORMAL, Sequence
from .anomaly import TrainConfig, TrainHistory, encode_batch
from .nn import (
    Adam,
    Attention,
    BiGru,
    Dense,
    LossWeights,
    ModelFormatError,
    Param,
    assign_params,
    cross_entropy_loss,
    load_params,
    save_params,
    softmax,
)
from .nn.layers import DEFAULT_MERGE
from .tracesim import default_sample_spacing, index_to_distance

MODEL_KIND_ABIGRU = "abigru/v1"
MODEL_KIND_FLAT = "bigru-flat/v1"
INPUT_STEPS = 31
INDEX_SCALE = 29.0  # regression target is fault_index / 29, clamped on output


@dataclass
class DiagnoserArch:
    input_steps: int = INPUT_STEPS
    hidden: tuple[int, int] = (64, 32)
    attention_dim: int = 32
    t1_hidden: int = 16
    t2_hidden: int = 20
    n_classes: int = 4
    merge: str = DEFAULT_MERGE


class MultiTaskBiGru:
    """Shared attention-BiGRU trunk with classification and regression heads."""

    def __init__(self, arch: DiagnoserArch, seed: int, model_kind: str = MODEL_KIND_ABIGRU):
        self.arch = arch
        self.seed = seed
        self.model_kind = model_kind
        rng = np.random.default_rng(seed)
        h1, h2 = arch.hidden
        m = arch.merge
        self.bigru1 = BiGru(1, h1, rng, name="bigru1", merge=m)
        self.bigru2 = BiGru(h1, h2, rng, name="bigru2", merge=m)
        self.attn = Attention(h2, arch.attention_dim, rng, name="attn")
        self.t1_hidden = Dense(h2, arch.t1_hidden, "elu", rng, name="t1_hidden")
        self.t1_out = Dense(arch.t1_hidden, arch.n_classes, "identity", rng, name="t1_out")
        self.t2_hidden = Dense(h2, arch.t2_hidden, "elu", rng, name="t2_hidden")
        self.t2_out = Dense(arch.t2_hidden, 1, "identity", rng, name="t2_out")
        self._layers = [
            self.bigru1,
            self.bigru2,
            self.attn,
            self.t1_hidden,
            self.t1_out,
            self.t2_hidden,
            self.t2_out,
        ]
        self._forward_done = False

    def params(self) -> list[Param]:
        out: list[Param] = []
        for layer in self._layers:
            out.extend(layer.params())
        return out

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (class probabilities, normalized index, attention weights)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.arch.input_steps:
            raise ValueError(f"expected {self.arch.input_steps} steps, got {x.shape[1]}")
        y1 = self.bigru1.forward(x[:, :, None])
        y2 = self.bigru2.forward(y1)
        context, alpha = self.attn.forward(y2)
        logits = self.t1_out.forward(self.t1_hidden.forward(context))
        probs = softmax(logits, axis=-1)
        pred = self.t2_out.forward(self.t2_hidden.forward(context))[:, 0]
        self._probs = probs
        self._pred = pred
        self._forward_done = True
        return probs, pred, alpha

    def backward(self, dlogits: np.ndarray, dpred: np.ndarray) -> None:
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        dc1 = self.t1_hidden.backward(self.t1_out.backward(dlogits))
        dc2 = self.t2_hidden.backward(self.t2_out.backward(dpred[:, None]))
        dy2 = self.attn.backward(dc1 + dc2)
        dy1 = self.bigru2.backward(dy2)
        self.bigru1.backward(dy1)

    def loss_and_grads(
        self,
        x: np.ndarray,
        class_idx: np.ndarray,
        index_norm: np.ndarray,
        t2_mask: np.ndarray,
        weights: LossWeights,
    ) -> tuple[float, float, float]:
        """Accumulate gradients of the weighted joint loss; returns the parts.

        Task 1 is cross-entropy over class probabilities; task 2 is MSE on the
        normalized index over rows where ``t2_mask`` is set.
        """
        B = len(x)
        probs, pred, _ = self.forward(x)
        one_hot = np.zeros_like(probs)
        one_hot[np.arange(B), class_idx] = 1.0
        loss1 = cross_entropy_loss(probs, one_hot)
        mask = t2_mask.astype(np.float64)
        n_masked = mask.sum()
        if n_masked > 0:
            diff = (pred - index_norm) * mask
            loss2 = float(np.sum(diff * diff) / n_masked)
            dpred = weights.lambda_2 * 2.0 * diff / n_masked
        else:
            loss2 = 0.0
            dpred = np.zeros_like(pred)
        # Fused softmax + cross-entropy gradient on the logits.
        dlogits = weights.lambda_1 * (probs - one_hot) / B
        self.backward(dlogits, dpred)
        total = weights.lambda_1 * loss1 + weights.lambda_2 * loss2
        return total, loss1, loss2

    def save(self, path: str, seed: int | None = None) -> None:
        save_params(
            path,
            self.model_kind,
            self.params(),
            {
                "merge_convention": self.arch.merge,
                "seed": self.seed if seed is None else seed,
                "architecture": {
                    "input_steps": self.arch.input_steps,
                    "hidden": list(self.arch.hidden),
                    "attention_dim": self.arch.attention_dim,
                    "t1_hidden": self.arch.t1_hidden,
                    "t2_hidden": self.arch.t2_hidden,
                    "n_classes": self.arch.n_classes,
                },
                "layers": [
                    {"name": "bigru1", "kind": "bigru"},
                    {"name": "bigru2", "kind": "bigru"},
                    {"name": "attn", "kind": "attention"},
                    {"name": "t1_hidden", "kind": "dense", "activation": "elu"},
                    {"name": "t1_out", "kind": "dense", "activation": "identity"},
                    {"name": "t2_hidden", "kind": "dense", "activation": "elu"},
                    {"name": "t2_out", "kind": "dense", "activation": "identity"},
                ],
            },
        )

    @staticmethod
    def load(path: str, expected_kind: str | None = None) -> "MultiTaskBiGru":
        manifest, tensors = load_params(path)
        kind = manifest.get("model_kind")
        if expected_kind is not None and kind != expected_kind:
            raise ModelFormatError(f"{path}: model kind {kind!r}, expected {expected_kind!r}")
        if kind not in (MODEL_KIND_ABIGRU, MODEL_KIND_FLAT):
            raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
        a = manifest["architecture"]
        arch = DiagnoserArch(
            input_steps=int(a["input_steps"]),
            hidden=tuple(a["hidden"]),
            attention_dim=int(a["attention_dim"]),
            t1_hidden=int(a["t1_hidden"]),
            t2_hidden=int(a["t2_hidden"]),
            n_classes=int(a["n_classes"]),
            merge=manifest.get("merge_convention", DEFAULT_MERGE),
        )
        model = MultiTaskBiGru(arch, seed=int(manifest.get("seed", 0)), model_kind=kind)
        assign_params(model.params(), tensors)
        return model


@dataclass
class DiagnosisResult:
    """Class posterior plus the clamped index and distance estimates."""

    class_probs: dict[str, float]
    predicted_class: str
    predicted_index: float
    predicted_distance_m: float
    attention_weights: list[float] = field(default_factory=list)

    def to_dict(self, gamma_db: float | None = None) -> dict:
        record = {
            "class": self.predicted_class,
            "probs": self.class_probs,
            "index": self.predicted_index,
            "distance_m": self.predicted_distance_m,
        }
        if gamma_db is not None:
            record["gamma_db"] = gamma_db
        return record


def _classes_for(model: MultiTaskBiGru) -> tuple[str, ...]:
    return FAULT_LABELS if model.arch.n_classes == 4 else ALL_LABELS


def _targets(
    sequences: list[Sequence], classes: tuple[str, ...]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    class_to_idx = {c: i for i, c in enumerate(classes)}
    cls = np.array([class_to_idx[s.label] for s in sequences], dtype=np.int64)
    idx_norm = np.array(
        [0.0 if s.fault_index is None else s.fault_index / INDEX_SCALE for s in sequences]
    )
    mask = np.array([s.fault_index is not None for s in sequences], dtype=bool)
    return cls, idx_norm, mask


def _train_multitask(
    model: MultiTaskBiGru,
    train: list[Sequence],
    validation: list[Sequence],
    weights: LossWeights,
    config: TrainConfig,
) -> TrainHistory:
    classes = _classes_for(model)
    x_train = encode_batch(train)
    cls_train, idx_train, mask_train = _targets(train, classes)
    x_val = encode_batch(validation)
    cls_val, idx_val, mask_val = _targets(validation, classes)
    rng = np.random.default_rng(config.seed)
    adam = Adam(model.params(), learning_rate=config.learning_rate)
    history = TrainHistory()
    best_params: list[np.ndarray] | None = None
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        total = 0.0
        for start in range(0, len(x_train), config.batch_size):
            sel = order[start : start + config.batch_size]
            model.zero_grads()
            loss, _, _ = model.loss_and_grads(
                x_train[sel], cls_train[sel], idx_train[sel], mask_train[sel], weights
            )
            adam.step()
            total += loss * len(sel)
        train_loss = total / len(x_train)
        val_loss = _validation_loss(
            model, x_val, cls_val, idx_val, mask_val, weights, config.batch_size
        )
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
    return history


def _validation_loss(
    model: MultiTaskBiGru,
    x: np.ndarray,
    cls: np.ndarray,
    idx: np.ndarray,
    mask: np.ndarray,
    weights: LossWeights,
    batch_size: int,
) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        sl = slice(start, start + batch_size)
        probs, pred, _ = model.forward(x[sl])
        one_hot = np.zeros_like(probs)
        one_hot[np.arange(len(probs)), cls[sl]] = 1.0
        loss1 = cross_entropy_loss(probs, one_hot)
        m = mask[sl].astype(np.float64)
        n_masked = m.sum()
        loss2 = float(np.sum(((pred - idx[sl]) * m) ** 2) / n_masked) if n_masked else 0.0
        total += (weights.lambda_1 * loss1 + weights.lambda_2 * loss2) * len(probs)
    return total / len(x)


def train_diagnoser(
    train: list[Sequence],
    validation: list[Sequence],
    loss_weights: LossWeights,
    config: TrainConfig,
) -> tuple[MultiTaskBiGru, TrainHistory]:
    """Train the four-class fault diagnoser; normal sequences are rejected."""
    for name, seqs in (("train", train), ("validation", validation)):
        bad = sum(1 for s in seqs if s.label == LABEL_NORMAL or s.fault_index is None)
        if bad:
            raise ValueError(f"{name} set contains {bad} normal/unindexed sequences")
    model = MultiTaskBiGru(DiagnoserArch(n_classes=4), seed=config.seed)
    history = _train_multitask(model, train, validation, loss_weights, config)
    return model, history


def train_flat_model_b(
    train: list[Sequence],
    validation: list[Sequence],
    loss_weights: LossWeights,
    config: TrainConfig,
) -> tuple[MultiTaskBiGru, TrainHistory]:
    """Train the flat five-class variant (normal class included, no detector).

    Normal rows carry no fault index; they are masked out of the regression
    loss and contribute to classification only.
    """
    model = MultiTaskBiGru(
        DiagnoserArch(n_classes=5), seed=config.seed, model_kind=MODEL_KIND_FLAT
    )
    history = _train_multitask(model, train, validation, loss_weights, config)
    return model, history


def diagnose(
    model: MultiTaskBiGru,
    seq: Sequence,
    sample_spacing_m: float | None = None,
) -> DiagnosisResult:
    """Classify one sequence and localize its fault index within the window."""
    probs, pred, alpha = model.forward(encode_batch([seq]))
    return _result_from_outputs(model, probs[0], pred[0], alpha[0], sample_spacing_m)


def _result_from_outputs(
    model: MultiTaskBiGru,
    probs: np.ndarray,
    pred: float,
    alpha: np.ndarray,
    sample_spacing_m: float | None,
) -> DiagnosisResult:
    spacing = default_sample_spacing() if sample_spacing_m is None else sample_spacing_m
    classes = _classes_for(model)
    index = float(np.clip(pred * INDEX_SCALE, 0.0, INDEX_SCALE))
    return DiagnosisResult(
        class_probs={c: float(p) for c, p in zip(classes, probs)},
        predicted_class=classes[int(np.argmax(probs))],
        predicted_index=index,
        predicted_distance_m=index_to_distance(index, spacing),
        attention_weights=[float(a) for a in alpha],
    )


def diagnose_batch(
    model: MultiTaskBiGru,
    seqs: list[Sequence],
    sample_spacing_m: float | None = None,
    batch_size: int = 256,
) -> list[DiagnosisResult]:
    results = []
    x = encode_batch(seqs)
    for start in range(0, len(x), batch_size):
        probs, pred, alpha = model.forward(x[start : start + batch_size])
        for i in range(len(probs)):
            results.append(
                _result_from_outputs(model, probs[i], pred[i], alpha[i], sample_spacing_m)
            )
    return results


def per_snr_breakdown(
    model: MultiTaskBiGru,
    test: list[Sequence],
    sample_spacing_m: float | None = None,
) -> dict[int, dict[str, float]]:
    """Accuracy and localization RMSE per 1 dB SNR bin; empty bins absent."""
    from .evaluation import snr_bin

    spacing = default_sample_spacing() if sample_spacing_m is None else sample_spacing_m
    results = diagnose_batch(model, test, spacing)
    by_bin: dict[int, list[tuple[bool, float]]] = {}
    for seq, res in zip(test, results):
        correct = res.predicted_class == seq.label
        err = (
            res.predicted_index - seq.fault_index
            if seq.fault_index is not None
            else math.nan
        )
        by_bin.setdefault(snr_bin(seq.gamma_db), []).append((correct, err))
    out = {}
    for b in sorted(by_bin):
        rows = by_bin[b]
        errs = np.array([e for _, e in rows if not math.isnan(e)])
        entry: dict[str, float] = {
            "count": len(rows),
            "accuracy": float(np.mean([c for c, _ in rows])),
        }
        if len(errs):
            rmse = float(np.sqrt(np.mean(errs**2)))
            entry["rmse_index"] = rmse
            entry["rmse_m"] = rmse * spacing
        out[b] = entry
    return out


def write_diagnosis_records(
    results: list[DiagnosisResult], gammas: list[float], path: str
) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for res, gamma in zip(results, gammas):
            f.write(json.dumps(res.to_dict(gamma_db=gamma)) + "\n")
