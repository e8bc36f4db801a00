"""``retrieve``: top-k gallery ids per query between two embedding stores."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from bindspace.errors import ConfigError
from bindspace.formats import load_store
from bindspace.retrieval import top_k, write_topk_csv


def cmd_retrieve(
    queries: Path, gallery: Path, k: int, out: Optional[Path] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (gallery indices, scores), each n_queries x k."""
    q = load_store(queries)
    g = load_store(gallery)
    if q.dim != g.dim:
        raise ConfigError(f"query store has dim {q.dim} but gallery store has dim {g.dim}")
    indices, scores = top_k(q.rows, g.rows, k)
    out = Path(out) if out is not None else Path(queries).with_suffix(".topk.csv")
    write_topk_csv(q.ids, g.ids, indices, scores, out)
    return indices, scores


def _handle(args: argparse.Namespace) -> None:
    cmd_retrieve(args.queries, args.gallery, args.k, args.out)


def register(subparsers) -> None:
    parser = subparsers.add_parser("retrieve", help="top-k cosine retrieval between two GBES stores")
    parser.add_argument("--queries", required=True, type=Path, help="GBES query store")
    parser.add_argument("--gallery", required=True, type=Path, help="GBES gallery store")
    parser.add_argument("--k", required=True, type=int, help="results per query")
    parser.add_argument("--out", type=Path, default=None, help="CSV output (default: <queries>.topk.csv)")
    parser.set_defaults(handler=_handle)
