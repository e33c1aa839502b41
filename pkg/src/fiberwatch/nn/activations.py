"""Pointwise activations and their vector-Jacobian products."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
LEAKY_SLOPE = 0.01

ACTIVATION_NAMES = (
    "identity",
    "relu",
    "leaky_relu",
    "elu",
    "selu",
    "sigmoid",
    "tanh",
    "softmax",
)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise softmax with max-shift; finite for |logits| up to ~700."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def activation_forward(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z >= 0.0, z, LEAKY_SLOPE * z)
    if name == "elu":
        return np.where(z >= 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "selu":
        return SELU_LAMBDA * np.where(
            z >= 0.0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0))
        )
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return softmax(z, axis=-1)
    raise ValueError(f"unknown activation: {name!r}")


def activation_vjp(name: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. pre-activation z, given activation output a and upstream da."""
    if name == "identity":
        return da
    if name == "relu":
        return da * (z > 0.0)
    if name == "leaky_relu":
        return da * np.where(z >= 0.0, 1.0, LEAKY_SLOPE)
    if name == "elu":
        # a = e^z - 1 on the negative branch, so d/dz = e^z = a + 1
        return da * np.where(z >= 0.0, 1.0, a + 1.0)
    if name == "selu":
        return da * np.where(z >= 0.0, SELU_LAMBDA, a + SELU_LAMBDA * SELU_ALPHA)
    if name == "sigmoid":
        return da * a * (1.0 - a)
    if name == "tanh":
        return da * (1.0 - a * a)
    if name == "softmax":
        inner = np.sum(da * a, axis=-1, keepdims=True)
        return a * (da - inner)
    raise ValueError(f"unknown activation: {name!r}")
