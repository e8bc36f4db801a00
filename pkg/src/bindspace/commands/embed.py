"""``embed``: project one modality of a dataset into the joint space."""

from __future__ import annotations

import argparse
from pathlib import Path

from bindspace.errors import ConfigError
from bindspace.formats import EmbeddingStore, load_dataset, serialize_store, write_file
from bindspace.pipeline import resume
from bindspace.retrieval import embed


def cmd_embed(ckpt: Path, data: Path, modality: str, out: Path) -> EmbeddingStore:
    state = resume(ckpt)
    if modality not in state.encoders:
        raise ConfigError(f"checkpoint has no encoder for modality {modality!r}")
    ds = load_dataset(data)
    if modality not in ds.modalities:
        raise ConfigError(f"{data} has no {modality!r} observations (has {list(ds.modalities)})")
    store = EmbeddingStore(modality, ds.ids, embed(state.encoders[modality], ds.observations[modality]))
    write_file(out, serialize_store(store))
    return store


def _handle(args: argparse.Namespace) -> None:
    cmd_embed(args.ckpt, args.data, args.modality, args.out)


def register(subparsers) -> None:
    parser = subparsers.add_parser("embed", help="write a GBES embedding store")
    parser.add_argument("--ckpt", required=True, type=Path, help="GBPL checkpoint")
    parser.add_argument("--data", required=True, type=Path, help="GBDS dataset or bundle")
    parser.add_argument("--modality", required=True, help="modality tag to embed")
    parser.add_argument("--out", required=True, type=Path, help="GBES output path")
    parser.set_defaults(handler=_handle)
