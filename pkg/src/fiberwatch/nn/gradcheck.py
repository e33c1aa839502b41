"""Central finite-difference gradient oracle used to verify analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_grad(
    loss_fn: Callable[[], float], array: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Numeric gradient of ``loss_fn()`` w.r.t. ``array``, perturbed in place.

    Central differences: (L(p + step) - L(p - step)) / (2 step), coordinate by
    coordinate. The array is restored bit-exactly afterwards.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        lo_hi = loss_fn()
        flat[i] = orig - step
        lo_lo = loss_fn()
        flat[i] = orig
        gflat[i] = (lo_hi - lo_lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps near-zero coordinates from amplifying finite-difference
    round-off into spurious failures.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
