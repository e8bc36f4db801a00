"""AdamW with decoupled weight decay and cosine annealing with warm restarts."""

from __future__ import annotations

import dataclasses
import math
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from bindspace.binary import ByteReader, ByteWriter
from bindspace.errors import ConfigError, DimensionError, FormatError
from bindspace.models import OptimizerConfig, ScheduleConfig

Params = Dict[str, np.ndarray]


@dataclasses.dataclass
class AdamWState:
    hyper: OptimizerConfig
    m: Params
    v: Params
    t: int = 0
    lr: float = 5e-5
    # parameter names excluded from weight decay
    no_decay: FrozenSet[str] = frozenset()

    @classmethod
    def zeros(
        cls,
        params: Params,
        hyper: OptimizerConfig,
        lr: float = 5e-5,
        no_decay: Iterable[str] = (),
    ) -> "AdamWState":
        return cls(
            hyper=hyper,
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            t=0,
            lr=lr,
            no_decay=frozenset(no_decay),
        )


def adamw_step(
    params: Params, grads: Params, state: AdamWState, lr: Optional[float] = None
) -> Tuple[Params, AdamWState]:
    """One decoupled-weight-decay Adam update; inputs are left untouched."""
    if set(params) != set(state.m) or set(grads) - set(params):
        raise DimensionError(
            f"parameter names {sorted(params)} do not match optimizer state {sorted(state.m)}"
        )
    h = state.hyper
    lr = state.lr if lr is None else float(lr)
    t = state.t + 1
    c1 = 1.0 - h.beta1**t
    c2 = 1.0 - h.beta2**t
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape or state.m[name].shape != theta.shape:
            raise DimensionError(
                f"{name}: parameter {theta.shape}, gradient {g.shape}, moment {state.m[name].shape}"
            )
        m = h.beta1 * state.m[name] + (1.0 - h.beta1) * g
        v = h.beta2 * state.v[name] + (1.0 - h.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + h.eps)
        if name not in state.no_decay:
            update = update + h.weight_decay * theta
        new_params[name] = theta - lr * update
        new_m[name] = m
        new_v[name] = v
    return new_params, dataclasses.replace(state, m=new_m, v=new_v, t=t, lr=lr)


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------


def annealed_lr(schedule: ScheduleConfig, t_cur: float, period: float) -> float:
    """eta_min + (eta_max - eta_min) * (1 + cos(pi * t_cur / period)) / 2."""
    if period <= 0:
        raise ConfigError(f"period must be positive, got {period}")
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * t_cur / period))


def locate(schedule: ScheduleConfig, global_step: int) -> Tuple[int, int]:
    """(T_cur, T_i) for a global step; T_cur resets to 0 at every restart."""
    if global_step < 0:
        raise ConfigError(f"global_step must be >= 0, got {global_step}")
    if schedule.t0 < 1 or schedule.t_mult < 1 or schedule.eta_min > schedule.eta_max:
        raise ConfigError(f"invalid schedule {schedule.model_dump()}")
    if schedule.t_mult == 1:
        return global_step % schedule.t0, schedule.t0
    t_cur, period = global_step, schedule.t0
    while t_cur >= period:
        t_cur -= period
        period *= schedule.t_mult
    return t_cur, period


def lr_at(schedule: ScheduleConfig, global_step: int) -> float:
    t_cur, period = locate(schedule, global_step)
    return annealed_lr(schedule, t_cur, period)


def restart_steps(schedule: ScheduleConfig, upto: int) -> List[int]:
    """Cumulative steps (<= upto) at which the schedule restarts."""
    steps: List[int] = []
    boundary, period = schedule.t0, schedule.t0
    while boundary <= upto:
        steps.append(boundary)
        period *= schedule.t_mult
        boundary += period
    return steps


# ---------------------------------------------------------------------------
# Persistence (embedded in pipeline checkpoints)
# ---------------------------------------------------------------------------


def write_state(out: ByteWriter, state: AdamWState) -> ByteWriter:
    out.text(state.hyper.model_dump_json())
    out.u64(state.t).f64(state.lr)
    out.u32(len(state.no_decay))
    for name in sorted(state.no_decay):
        out.text(name)
    out.u32(len(state.m))
    for name in sorted(state.m):
        shape = state.m[name].shape
        out.text(name).u32(shape[0]).u32(shape[1])
        out.floats(state.m[name], 8).floats(state.v[name], 8)
    return out


def read_state(reader: ByteReader) -> AdamWState:
    start = reader.offset
    try:
        hyper = OptimizerConfig.model_validate_json(reader.text("optimizer hyperparameters"))
    except ValidationError as exc:
        raise FormatError("invalid optimizer hyperparameters", start) from exc
    t = reader.u64("step counter")
    lr = reader.f64("learning rate")
    no_decay = frozenset(reader.text("parameter name") for _ in range(reader.u32("count")))
    m: Params = {}
    v: Params = {}
    for _ in range(reader.u32("moment count")):
        name = reader.text("parameter name")
        rows, cols = reader.u32("rows"), reader.u32("cols")
        m[name] = reader.floats(rows * cols, 8, f"{name} first moment").reshape(rows, cols)
        v[name] = reader.floats(rows * cols, 8, f"{name} second moment").reshape(rows, cols)
    return AdamWState(hyper=hyper, m=m, v=v, t=t, lr=lr, no_decay=no_decay)


def serialize_state(state: AdamWState) -> bytes:
    return write_state(ByteWriter(), state).getvalue()


def deserialize_state(data: bytes) -> AdamWState:
    reader = ByteReader(data, "optimizer state")
    state = read_state(reader)
    reader.finish()
    return state
