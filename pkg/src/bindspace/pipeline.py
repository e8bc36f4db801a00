"""Multi-stage binding: each stage trains one encoder against a frozen target.

A stage reads its paired dataset, shuffles the training split with the
stage seed once per epoch, and takes one AdamW step per mini-batch on the
stage's InfoNCE variant. Target embeddings are computed from the frozen
encoder and enter the graph as constants. When a stage completes, the
pipeline freezes its encoder so later stages may bind to it.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from bindspace import numeric as nm
from bindspace.binary import ByteReader, ByteWriter
from bindspace.encoder import (
    MlpEncoder,
    forward,
    forward_graph,
    freeze,
    init_encoder,
    init_from,
    read_encoder,
    serialize,
)
from bindspace.errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    NumericError,
)
from bindspace.formats import read_file, serialize_dataset, sha256_hex, write_file
from bindspace.loss import Temperature, clamp_temperature, infonce, temperature_value
from bindspace.models import MetricRecord, RunConfig, StageSpec, StageSummary
from bindspace.optim import AdamWState, adamw_step, lr_at, read_state, write_state
from bindspace.seeding import derive_seed
from bindspace.synthworld import PairedDataset, reference_encoders

logger = logging.getLogger(__name__)

GBPL_MAGIC = b"GBPL"
GBPL_VERSION = 1

TEMPERATURE_PARAM = "log_inv_tau"

_REC_CONFIG = 1
_REC_ENCODER = 2
_REC_OPTIMIZER = 3
_REC_TEMPERATURE = 4
_REC_PROGRESS = 5
_REC_METRICS = 6
_REC_SUMMARY = 7
_REC_DATASET = 8


@dataclasses.dataclass
class StageCursor:
    """Position inside a running stage: next epoch/batch to execute."""

    stage: str
    epoch: int = 0
    batch: int = 0
    step: int = 0


@dataclasses.dataclass
class PipelineState:
    encoders: Dict[str, MlpEncoder]
    seed: int = 0
    temperatures: Dict[str, float] = dataclasses.field(default_factory=dict)
    optimizers: Dict[str, AdamWState] = dataclasses.field(default_factory=dict)
    metrics: List[MetricRecord] = dataclasses.field(default_factory=list)
    completed: List[str] = dataclasses.field(default_factory=list)
    summaries: Dict[str, StageSummary] = dataclasses.field(default_factory=dict)
    datasets: Dict[str, str] = dataclasses.field(default_factory=dict)
    cursor: Optional[StageCursor] = None
    config_json: Optional[str] = None

    def copy(self) -> "PipelineState":
        return dataclasses.replace(
            self,
            encoders=dict(self.encoders),
            temperatures=dict(self.temperatures),
            optimizers=dict(self.optimizers),
            metrics=list(self.metrics),
            completed=list(self.completed),
            summaries=dict(self.summaries),
            datasets=dict(self.datasets),
            cursor=dataclasses.replace(self.cursor) if self.cursor else None,
        )

    def stage_metrics(self, stage: str) -> List[MetricRecord]:
        return [r for r in self.metrics if r.stage == stage]


def stage_seed(spec: StageSpec, master: int) -> int:
    return spec.seed if spec.seed is not None else derive_seed(master, f"stage/{spec.name}")


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    """Full batches plus the remainder, unless the remainder is a single row."""
    return n_train // batch_size + (1 if n_train % batch_size >= 2 else 0)


def _stage_views(
    spec: StageSpec, state: PipelineState, datasets: Mapping[str, PairedDataset]
) -> Tuple[MlpEncoder, MlpEncoder, PairedDataset]:
    if spec.dataset not in datasets:
        raise ConfigError(f"stage {spec.name!r}: dataset {spec.dataset!r} is not available")
    for role in ("trainable", "target"):
        if getattr(spec, role) not in state.encoders:
            raise ConfigError(f"stage {spec.name!r}: no encoder {getattr(spec, role)!r}")
    trainable = state.encoders[spec.trainable]
    target = state.encoders[spec.target]
    ds = datasets[spec.dataset]
    for role, enc in (("trainable", trainable), ("target", target)):
        modality = getattr(spec, role)
        if ds.dim(modality) != enc.input_dim:
            raise DimensionError(
                f"stage {spec.name!r}: {modality} observations have {ds.dim(modality)} "
                f"columns but the {role} encoder expects {enc.input_dim}"
            )
    if trainable.output_dim != target.output_dim:
        raise DimensionError(
            f"stage {spec.name!r}: joint dims differ, {trainable.output_dim} vs {target.output_dim}"
        )
    return trainable, target, ds


def stage_loss(
    spec: StageSpec,
    trainable: MlpEncoder,
    target_embeddings: np.ndarray,
    inputs: np.ndarray,
    temp: Temperature,
    track: bool = True,
):
    """Loss of one batch and the leaves it depends on.

    Returns ``(LossOutput, params)`` where ``params`` maps parameter names
    (encoder weights and the temperature) to graph leaves. With
    ``track=False`` everything is constant.
    """
    enc = trainable if track else freeze(trainable)
    out, params = forward_graph(enc, nm.constant(inputs))
    target = nm.constant(target_embeddings)
    s = temp.as_node(trainable=track)
    if spec.loss == "directional":
        result = infonce("directional", out, target, temp, s)
    else:
        result = infonce("symmetric", target, out, temp, s)
    if track:
        params = {**params, TEMPERATURE_PARAM: s}
    return result, params


def heldout_loss(
    spec: StageSpec, state: PipelineState, datasets: Mapping[str, PairedDataset]
) -> Optional[float]:
    """Mean stage loss over the held-out split, in batch-size chunks."""
    trainable, target, ds = _stage_views(spec, state, datasets)
    x = ds.heldout(spec.trainable)
    y = forward(target, ds.heldout(spec.target))
    temp = Temperature(state.temperatures.get(spec.name, Temperature().log_inv_tau))
    total, rows = 0.0, 0
    for lo in range(0, len(x), spec.batch_size):
        hi = min(lo + spec.batch_size, len(x))
        if hi - lo < 2:
            continue
        result, _ = stage_loss(spec, trainable, y[lo:hi], x[lo:hi], temp, track=False)
        total += result.value * (hi - lo)
        rows += hi - lo
    return total / rows if rows else None


def _epoch_mean(records: Sequence[MetricRecord], epoch: int) -> Optional[float]:
    losses = [r.loss for r in records if r.epoch == epoch]
    return float(np.mean(losses)) if losses else None


def run_stage(
    spec: StageSpec,
    state: PipelineState,
    datasets: Mapping[str, PairedDataset],
    max_steps: Optional[int] = None,
) -> PipelineState:
    """Train ``spec.trainable`` against the frozen ``spec.target``.

    Resumes from ``state.cursor`` when it points at this stage. With
    ``max_steps`` the stage stops after that many steps and the returned
    state keeps a cursor; otherwise the stage is appended to ``completed``.
    """
    state = state.copy()
    trainable, target, ds = _stage_views(spec, state, datasets)
    if not target.frozen:
        raise ContractError(f"stage {spec.name!r}: target encoder {spec.target!r} is not frozen")
    if trainable.frozen:
        raise ContractError(f"stage {spec.name!r}: encoder {spec.trainable!r} is frozen")
    if spec.epochs == 0:
        state.completed.append(spec.name)
        logger.info("stage skipped stage=%s epochs=0", spec.name)
        return state

    digest = sha256_hex(serialize_dataset(ds))
    recorded = state.datasets.get(spec.dataset)
    if recorded is not None and recorded != digest:
        raise ConfigError(f"stage {spec.name!r}: dataset {spec.dataset!r} changed since the checkpoint")
    state.datasets[spec.dataset] = digest

    seed = stage_seed(spec, state.seed)
    x_train = ds.train(spec.trainable)
    y_train = ds.train(spec.target)
    n_train = len(x_train)
    per_epoch = steps_per_epoch(n_train, spec.batch_size)

    cursor = state.cursor
    if cursor is None or cursor.stage != spec.name:
        cursor = StageCursor(spec.name)
        state.temperatures[spec.name] = Temperature().log_inv_tau
        params = {**trainable.parameters(), TEMPERATURE_PARAM: np.array([[state.temperatures[spec.name]]])}
        state.optimizers[spec.name] = AdamWState.zeros(
            params, spec.optimizer, lr=spec.schedule.eta_max, no_decay=[TEMPERATURE_PARAM]
        )
        summary = StageSummary(stage=spec.name)
        summary.heldout_before = heldout_loss(spec, state, datasets)
        state.summaries[spec.name] = summary
        logger.info(
            "stage start stage=%s trainable=%s target=%s loss=%s epochs=%d steps_per_epoch=%d heldout=%s",
            spec.name, spec.trainable, spec.target, spec.loss, spec.epochs, per_epoch,
            summary.heldout_before,
        )
    else:
        logger.info(
            "stage resume stage=%s epoch=%d batch=%d step=%d",
            spec.name, cursor.epoch, cursor.batch, cursor.step,
        )
    state.cursor = cursor

    cached = forward(target, y_train) if spec.cache_targets else None
    temp = Temperature(state.temperatures[spec.name])
    opt = state.optimizers[spec.name]
    executed = 0

    while cursor.epoch < spec.epochs:
        order = np.random.default_rng([seed, cursor.epoch]).permutation(n_train)
        while cursor.batch < per_epoch:
            if max_steps is not None and executed >= max_steps:
                state.encoders[spec.trainable] = trainable
                state.temperatures[spec.name] = temp.log_inv_tau
                state.optimizers[spec.name] = opt
                logger.info("stage halted stage=%s step=%d", spec.name, cursor.step)
                return state
            idx = order[cursor.batch * spec.batch_size : (cursor.batch + 1) * spec.batch_size]
            targets = cached[idx] if cached is not None else forward(target, y_train[idx])
            lr = lr_at(spec.schedule, cursor.step)
            tau = temperature_value(temp)
            try:
                result, leaves = stage_loss(spec, trainable, targets, x_train[idx], temp)
                grads = nm.backward(result.loss, wrt=leaves.values())
            except DegenerateInputError as exc:
                raise DegenerateInputError(f"stage {spec.name!r} step {cursor.step}: {exc.detail}", exc.row) from exc
            except NumericError as exc:
                raise NumericError(f"stage {spec.name!r} step {cursor.step}: {exc}") from exc
            loss_value = result.value
            if not math.isfinite(loss_value):
                raise NumericError(f"stage {spec.name!r} step {cursor.step}: loss is not finite")

            params = {**trainable.parameters(), TEMPERATURE_PARAM: np.array([[temp.log_inv_tau]])}
            updated, opt = adamw_step(
                params, {name: grads[leaf] for name, leaf in leaves.items()}, opt, lr
            )
            s = updated.pop(TEMPERATURE_PARAM)
            if not all(np.all(np.isfinite(v)) for v in updated.values()) or not np.isfinite(s).all():
                raise NumericError(f"stage {spec.name!r} step {cursor.step}: update is not finite")
            trainable = trainable.with_parameters(updated)
            temp.log_inv_tau = float(s[0, 0])
            clamp_temperature(temp)

            state.metrics.append(
                MetricRecord(
                    stage=spec.name, step=cursor.step, epoch=cursor.epoch,
                    loss=loss_value, lr=lr, tau=tau,
                )
            )
            cursor.batch += 1
            cursor.step += 1
            executed += 1
        logger.info(
            "epoch done stage=%s epoch=%d mean_loss=%s lr=%.3g tau=%.4f",
            spec.name, cursor.epoch,
            _epoch_mean(state.stage_metrics(spec.name), cursor.epoch),
            lr_at(spec.schedule, cursor.step), temperature_value(temp),
        )
        cursor.epoch += 1
        cursor.batch = 0

    state.encoders[spec.trainable] = trainable
    state.temperatures[spec.name] = temp.log_inv_tau
    state.optimizers[spec.name] = opt
    state.cursor = None
    state.completed.append(spec.name)

    records = state.stage_metrics(spec.name)
    summary = state.summaries.get(spec.name, StageSummary(stage=spec.name)).model_copy()
    summary.steps = len(records)
    if records:
        summary.first_epoch_loss = _epoch_mean(records, records[0].epoch)
        summary.last_epoch_loss = _epoch_mean(records, records[-1].epoch)
        summary.heldout_after = heldout_loss(spec, state, datasets)
    summary.final_tau = temperature_value(temp)
    state.summaries[spec.name] = summary
    logger.info(
        "stage done stage=%s steps=%d first_epoch_loss=%s last_epoch_loss=%s heldout_before=%s heldout_after=%s tau=%.4f",
        spec.name, summary.steps, summary.first_epoch_loss, summary.last_epoch_loss,
        summary.heldout_before, summary.heldout_after, summary.final_tau,
    )
    return state


def _frozen_snapshot(state: PipelineState) -> Dict[str, bytes]:
    return {k: serialize(e, 8) for k, e in state.encoders.items() if e.frozen}


def run_pipeline(
    stages: Sequence[StageSpec],
    datasets: Mapping[str, PairedDataset],
    encoders: Optional[Mapping[str, MlpEncoder]] = None,
    state: Optional[PipelineState] = None,
    seed: int = 0,
    max_steps: Optional[int] = None,
) -> PipelineState:
    """Run stages in order, freezing each trained encoder before the next stage.

    Completed stages in ``state`` are skipped and an in-progress stage is
    resumed, so a checkpointed state continues where it stopped.
    """
    if state is None:
        if encoders is None:
            raise ConfigError("run_pipeline needs encoders or a state to resume")
        state = PipelineState(encoders=dict(encoders), seed=seed)
    names = [s.name for s in stages]
    if len(set(names)) != len(names):
        raise ConfigError(f"stage names must be unique, got {names}")

    budget = max_steps
    for spec in stages:
        if spec.name in state.completed:
            continue
        if state.cursor is not None and state.cursor.stage != spec.name:
            raise ConfigError(
                f"stage {spec.name!r}: checkpoint is in the middle of stage {state.cursor.stage!r}"
            )
        target = state.encoders.get(spec.target)
        if target is None or not target.frozen:
            raise ConfigError(
                f"stage {spec.name!r}: target {spec.target!r} is neither a reference encoder "
                "nor the encoder of a completed stage"
            )
        before = _frozen_snapshot(state)
        steps_before = len(state.metrics)
        state = run_stage(spec, state, datasets, max_steps=budget)
        after = _frozen_snapshot(state)
        changed = [k for k in before if after.get(k) != before[k]]
        if changed:
            raise ContractError(f"stage {spec.name!r} modified frozen encoders {changed}")
        if spec.name not in state.completed:
            return state
        if budget is not None:
            budget -= len(state.metrics) - steps_before
        state.encoders[spec.trainable] = freeze(state.encoders[spec.trainable])
    return state


def build_encoders(cfg: RunConfig) -> Dict[str, MlpEncoder]:
    """Initial encoder registry for a run configuration.

    Reference encoders come from the world; trainable ones are seeded
    per id, or copied from their stage target when shapes match and the
    encoder asks for a warm start.
    """
    dims = cfg.world.modality_dims
    refs = reference_encoders(
        cfg.world, cfg.joint_dim, [m for m, e in cfg.encoders.items() if e.kind == "reference"]
    )
    registry: Dict[str, MlpEncoder] = dict(refs)
    targets = {s.trainable: s.target for s in cfg.stages}
    for mid, ecfg in cfg.encoders.items():
        if ecfg.kind != "mlp":
            continue
        layer_dims = (dims[mid], *ecfg.hidden, cfg.joint_dim)
        target = refs.get(targets.get(mid, ""))
        if ecfg.warm_start and target is not None and target.dims == layer_dims:
            registry[mid] = init_from(target, layer_dims)
            logger.info("encoder %s warm-started from %s", mid, targets[mid])
        else:
            registry[mid] = init_encoder(
                layer_dims, ecfg.activation, derive_seed(cfg.seed, f"encoder/{mid}")
            )
    return {m: registry[m] for m in cfg.encoders}


# ---------------------------------------------------------------------------
# GBPL checkpoints
# ---------------------------------------------------------------------------


def serialize_state(state: PipelineState) -> bytes:
    records: List[Tuple[int, bytes]] = []
    if state.config_json is not None:
        records.append((_REC_CONFIG, ByteWriter().text(state.config_json).getvalue()))
    for eid in sorted(state.encoders):
        body = ByteWriter().text(eid).raw(serialize(state.encoders[eid], 8))
        records.append((_REC_ENCODER, body.getvalue()))
    for name in sorted(state.optimizers):
        body = write_state(ByteWriter().text(name), state.optimizers[name])
        records.append((_REC_OPTIMIZER, body.getvalue()))
    for name in sorted(state.temperatures):
        records.append((_REC_TEMPERATURE, ByteWriter().text(name).f64(state.temperatures[name]).getvalue()))
    for name in sorted(state.summaries):
        records.append((_REC_SUMMARY, ByteWriter().text(state.summaries[name].model_dump_json()).getvalue()))
    for name in sorted(state.datasets):
        records.append((_REC_DATASET, ByteWriter().text(name).text(state.datasets[name]).getvalue()))

    progress = ByteWriter().u64(state.seed).u32(len(state.completed))
    for name in state.completed:
        progress.text(name)
    if state.cursor is None:
        progress.u8(0)
    else:
        c = state.cursor
        progress.u8(1).text(c.stage).u64(c.epoch).u64(c.batch).u64(c.step)
    records.append((_REC_PROGRESS, progress.getvalue()))

    metrics = ByteWriter().u64(len(state.metrics))
    for r in state.metrics:
        metrics.text(r.stage).u64(r.step).u64(r.epoch).f64(r.loss).f64(r.lr).f64(r.tau)
    records.append((_REC_METRICS, metrics.getvalue()))

    out = ByteWriter().raw(GBPL_MAGIC).u32(GBPL_VERSION).u32(len(records))
    for tag, body in records:
        out.u8(tag).blob(body)
    return out.getvalue()


def _read_record(tag: int, body: bytes, offset: int, state: PipelineState, seen: set) -> None:
    r = ByteReader(body, "checkpoint record")
    try:
        if tag == _REC_CONFIG:
            state.config_json = r.text("config")
        elif tag == _REC_ENCODER:
            eid = r.text("encoder id")
            state.encoders[eid] = read_encoder(r)
        elif tag == _REC_OPTIMIZER:
            name = r.text("stage")
            state.optimizers[name] = read_state(r)
        elif tag == _REC_TEMPERATURE:
            name = r.text("stage")
            state.temperatures[name] = r.f64("temperature")
        elif tag == _REC_SUMMARY:
            summary = StageSummary.model_validate_json(r.text("summary"))
            state.summaries[summary.stage] = summary
        elif tag == _REC_DATASET:
            name = r.text("dataset")
            state.datasets[name] = r.text("sha256")
        elif tag == _REC_PROGRESS:
            state.seed = r.u64("seed")
            state.completed = [r.text("stage") for _ in range(r.u32("stage count"))]
            if r.u8("cursor flag"):
                state.cursor = StageCursor(r.text("stage"), r.u64("epoch"), r.u64("batch"), r.u64("step"))
        elif tag == _REC_METRICS:
            state.metrics = [
                MetricRecord(
                    stage=r.text("stage"), step=r.u64("step"), epoch=r.u64("epoch"),
                    loss=r.f64("loss"), lr=r.f64("lr"), tau=r.f64("tau"),
                )
                for _ in range(r.u64("metric count"))
            ]
        else:
            raise FormatError(f"unknown checkpoint record type {tag}", offset)
        r.finish()
    except FormatError as exc:
        raise FormatError(f"corrupt checkpoint record at offset {offset}: {exc}") from exc
    except ValidationError as exc:
        raise FormatError("corrupt checkpoint record", offset) from exc
    seen.add(tag)


def deserialize_state(data: bytes) -> PipelineState:
    r = ByteReader(data, "pipeline checkpoint")
    r.magic(GBPL_MAGIC)
    r.version(GBPL_VERSION)
    state = PipelineState(encoders={})
    seen: set = set()
    for _ in range(r.u32("record count")):
        offset = r.offset
        tag = r.u8("record type")
        _read_record(tag, r.blob("record"), offset, state, seen)
    r.finish()
    for required in (_REC_PROGRESS, _REC_METRICS):
        if required not in seen:
            raise FormatError(f"checkpoint lacks record type {required}", r.offset)
    return state


def checkpoint(state: PipelineState, path: Union[str, Path]) -> str:
    """Write a GBPL file; returns its SHA-256."""
    return write_file(path, serialize_state(state))


def resume(path: Union[str, Path]) -> PipelineState:
    return deserialize_state(read_file(path, "pipeline checkpoint"))


METRICS_HEADER = ("stage", "step", "epoch", "loss", "lr", "tau")


def write_metrics_csv(records: Sequence[MetricRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in records:
            writer.writerow([r.stage, r.step, r.epoch, repr(r.loss), repr(r.lr), repr(r.tau)])
    logger.info("wrote %s rows=%d", path, len(records))
