"""Central finite differences, used to check analytic gradients."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from bindspace.errors import ContractError, NumericError


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Estimate grad f(x) coordinate by coordinate.

    ``x`` may have any shape; the estimate has the same shape. ``f`` is
    called with perturbed copies and must return a finite scalar.
    """
    if not h > 0:
        raise ContractError(f"step h must be positive, got {h}")
    base = np.array(x, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = float(f(plus.reshape(base.shape)))
        fm = float(f(minus.reshape(base.shape)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"objective is not finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the larger of the two max-norms (at least ``floor``)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), floor)
    return float(np.max(np.abs(a - n))) / scale
