"""``gen-data``: write the synthetic world's datasets and a manifest."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Optional

from bindspace.config import load_run_config
from bindspace.formats import serialize_dataset, write_file
from bindspace.models import Manifest, ManifestFile, RunConfig
from bindspace.synthworld import generate_world, world_seeds


MANIFEST_NAME = "manifest.json"


def data_dir(output_dir: Path) -> Path:
    return Path(output_dir) / "data"


def cmd_gen_data(cfg: RunConfig, output_dir: Optional[Path] = None) -> Manifest:
    out = Path(output_dir or cfg.output_dir)
    world = generate_world(cfg.world)
    parts = [(name, "dataset", ds) for name, ds in world.datasets.items()]
    parts.append(("eval", "bundle", world.bundle))

    files = []
    for name, kind, ds in parts:
        data = serialize_dataset(ds)
        rel = f"data/{name}.gbds"
        digest = write_file(out / rel, data)
        files.append(ManifestFile(name=rel, kind=kind, bytes=len(data), sha256=digest))

    manifest = Manifest(master_seed=cfg.seed, seeds=world_seeds(cfg.world), files=files)
    write_file(out / MANIFEST_NAME, (manifest.model_dump_json(indent=2) + "\n").encode("utf-8"))
    return manifest


def _handle(args: argparse.Namespace) -> None:
    cmd_gen_data(load_run_config(args.config), args.out)


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen-data", help="generate GBDS datasets for a run config")
    parser.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    parser.add_argument("--out", type=Path, default=None, help="override the config's output_dir")
    parser.set_defaults(handler=_handle)
