"""Training losses: reconstruction MSE, cross-entropy, and the weighted
two-task combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    """Weights of the classification and regression terms in the joint loss."""

    lambda_1: float = 1.0
    lambda_2: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_1 < 0 or self.lambda_2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_1 == 0 and self.lambda_2 == 0:
            raise ValueError("loss weights must not both be zero")


class ClampCounter:
    """Counts probability clamps at the floor, for visibility in logs."""

    def __init__(self) -> None:
        self.count = 0


clamp_warnings = ClampCounter()


def mse_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean of squared differences over all elements."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    d = x_hat - x
    return float(np.mean(d * d))


def mse_grad(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Gradient of mse_loss w.r.t. x_hat."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return 2.0 * (x_hat - x) / x.size


def cross_entropy_loss(probs: np.ndarray, one_hot: np.ndarray) -> float:
    """Mean negative log probability of the true class over a batch.

    Zero probabilities at the true class are clamped at 1e-12 and counted.
    """
    probs = np.asarray(probs, dtype=np.float64)
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None, :]
        one_hot = one_hot[None, :]
    if probs.shape != one_hot.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {one_hot.shape}")
    p_true = np.sum(probs * one_hot, axis=-1)
    n_clamped = int(np.sum(p_true < PROB_FLOOR))
    if n_clamped:
        clamp_warnings.count += n_clamped
        p_true = np.maximum(p_true, PROB_FLOOR)
    return float(np.mean(-np.log(p_true)))


def multitask_loss(loss_1: float, loss_2: float, weights: LossWeights) -> float:
    """Weighted sum of the two task losses."""
    return weights.lambda_1 * float(loss_1) + weights.lambda_2 * float(loss_2)
