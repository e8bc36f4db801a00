"""``train``: run the binding pipeline over generated datasets."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Optional

from bindspace.commands.gen_data import data_dir
from bindspace.config import load_run_config
from bindspace.encoder import serialize
from bindspace.errors import ConfigError
from bindspace.formats import load_dataset, write_file
from bindspace.models import RunConfig
from bindspace.pipeline import (
    PipelineState,
    build_encoders,
    checkpoint,
    resume,
    run_pipeline,
    write_metrics_csv,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.gbpl"


def cmd_train(
    cfg: RunConfig,
    output_dir: Optional[Path] = None,
    resume_path: Optional[Path] = None,
    halt_after: Optional[int] = None,
) -> PipelineState:
    """Train every stage; writes the checkpoint, metrics and (once complete) encoder files."""
    if halt_after is not None and halt_after < 0:
        raise ConfigError(f"--halt-after must be >= 0, got {halt_after}")
    out = Path(output_dir or cfg.output_dir)
    datasets = {}
    for stage in cfg.stages:
        if stage.dataset not in datasets:
            datasets[stage.dataset] = load_dataset(data_dir(out) / f"{stage.dataset}.gbds")

    config_json = cfg.model_dump_json()
    if resume_path is not None:
        state = resume(resume_path)
        if state.config_json != config_json:
            raise ConfigError(f"checkpoint {resume_path} was written for a different run config")
    else:
        state = PipelineState(encoders=build_encoders(cfg), seed=cfg.seed, config_json=config_json)

    state = run_pipeline(cfg.stages, datasets, state=state, max_steps=halt_after)

    checkpoint(state, out / CHECKPOINT_NAME)
    write_metrics_csv(state.metrics, out / "metrics.csv")
    if state.cursor is not None:
        logger.info("training halted in stage %s; resume with --resume", state.cursor.stage)
        return state
    for modality, enc in state.encoders.items():
        path = out / "encoders" / f"{modality}.gbec"
        write_file(path, serialize(enc))
    summaries = {name: s.model_dump() for name, s in state.summaries.items()}
    write_file(out / "summary.json", (json.dumps(summaries, indent=2) + "\n").encode("utf-8"))
    return state


def _handle(args: argparse.Namespace) -> None:
    cmd_train(load_run_config(args.config), args.out, args.resume, args.halt_after)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="run the multi-stage binding pipeline")
    parser.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    parser.add_argument("--resume", type=Path, default=None, help="GBPL checkpoint to continue from")
    parser.add_argument(
        "--halt-after", type=int, default=None, metavar="STEPS",
        help="stop after this many optimizer steps and checkpoint",
    )
    parser.add_argument("--out", type=Path, default=None, help="override the config's output_dir")
    parser.set_defaults(handler=_handle)
