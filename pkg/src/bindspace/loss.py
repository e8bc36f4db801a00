"""Directional and symmetric InfoNCE with a learnable temperature.

Rows of both inputs are L2-normalized before their dot products are taken,
so logits are cosine similarities scaled by 1/tau.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from bindspace import numeric as nm
from bindspace.errors import ConfigError, DimensionError

INITIAL_TAU = 0.07
MIN_INV_TAU = 1.0
MAX_INV_TAU = 100.0


@dataclasses.dataclass
class Temperature:
    """Stores s = log(1/tau); tau = exp(-s)."""

    log_inv_tau: float = -math.log(INITIAL_TAU)
    node: Optional[nm.Node] = dataclasses.field(default=None, repr=False, compare=False)

    def as_node(self, trainable: bool = True) -> nm.Node:
        """Fresh 1x1 leaf for the current value of s."""
        self.node = nm.parameter(self.log_inv_tau) if trainable else nm.constant(self.log_inv_tau)
        return self.node


def temperature_value(temp: Temperature) -> float:
    return math.exp(-temp.log_inv_tau)


def clamp_temperature(temp: Temperature) -> Temperature:
    """Project s so that 1/tau stays within [1, 100]."""
    temp.log_inv_tau = min(max(temp.log_inv_tau, math.log(MIN_INV_TAU)), math.log(MAX_INV_TAU))
    return temp


@dataclasses.dataclass
class LossOutput:
    loss: nm.Node
    # detached diagnostic copy of the scaled similarity logits
    logits: np.ndarray

    @property
    def value(self) -> float:
        return self.loss.item()


def _logits(o, c, temp: Temperature, s: Optional[nm.Node]) -> nm.Node:
    o, c = nm.lift(o), nm.lift(c)
    if o.shape != c.shape:
        raise DimensionError(
            f"InfoNCE inputs differ in shape: {o.shape[0]}x{o.shape[1]} vs {c.shape[0]}x{c.shape[1]}"
        )
    if o.shape[0] < 1:
        raise DimensionError("InfoNCE needs at least one row")
    sim = nm.matmul(nm.l2_normalize_rows(o), nm.transpose(nm.l2_normalize_rows(c)))
    scale = nm.exp(s if s is not None else temp.as_node())
    return nm.mul(sim, scale)


def _direction(logits: nm.Node) -> nm.Node:
    """(1/k) * sum_i -log softmax_i(logits)[i]."""
    return nm.scale(nm.mean(nm.diagonal(nm.log_softmax_rows(logits))), -1.0)


def infonce_directional(
    o, c, temp: Temperature, s: Optional[nm.Node] = None
) -> LossOutput:
    """Rows of ``o`` classify their partner among the rows of ``c``.

    ``s`` lets a caller supply an existing temperature leaf; by default a
    fresh trainable leaf is created on ``temp``.
    """
    logits = _logits(o, c, temp, s)
    return LossOutput(_direction(logits), logits.value.copy())


def infonce_symmetric(
    o, a, temp: Temperature, s: Optional[nm.Node] = None
) -> LossOutput:
    """Mean of the o->a and a->o directional losses."""
    logits = _logits(o, a, temp, s)
    l1 = _direction(logits)
    l2 = _direction(nm.transpose(logits))
    return LossOutput(nm.scale(nm.add(l1, l2), 0.5), logits.value.copy())


def infonce(variant: str, o, c, temp: Temperature, s: Optional[nm.Node] = None) -> LossOutput:
    if variant == "directional":
        return infonce_directional(o, c, temp, s)
    if variant == "symmetric":
        return infonce_symmetric(o, c, temp, s)
    raise ConfigError(f"unknown loss variant {variant!r}")
