"""``eval``: all-pairs retrieval reports for a trained checkpoint."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import List, Optional

from bindspace.errors import ConfigError
from bindspace.formats import load_dataset
from bindspace.models import RetrievalReport
from bindspace.pipeline import resume
from bindspace.retrieval import evaluate_all_pairs, write_ranks_csv, write_report_csv


def parse_k_list(text: str) -> List[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--k must be a comma-separated list of integers, got {text!r}") from exc
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"--k values must be positive, got {text!r}")
    return sorted(set(ks))


def cmd_eval(
    ckpt: Path, bundle_path: Path, ks: List[int], out_dir: Optional[Path] = None
) -> List[RetrievalReport]:
    state = resume(ckpt)
    bundle = load_dataset(bundle_path)
    reports = evaluate_all_pairs(state.encoders, bundle, ks, seed=state.seed)
    out = Path(out_dir) if out_dir is not None else Path(ckpt).parent / "eval"
    write_report_csv(reports, out / "retrieval.csv")
    write_ranks_csv(reports, out / "ranks.csv")
    return reports


def _handle(args: argparse.Namespace) -> None:
    cmd_eval(args.ckpt, args.bundle, parse_k_list(args.k), args.out)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="cross-modal retrieval over an evaluation bundle")
    parser.add_argument("--ckpt", required=True, type=Path, help="GBPL checkpoint")
    parser.add_argument("--bundle", required=True, type=Path, help="GBDS evaluation bundle")
    parser.add_argument("--k", default="1,5,10", help="comma-separated recall cut-offs")
    parser.add_argument("--out", type=Path, default=None, help="report directory (default: <ckpt dir>/eval)")
    parser.set_defaults(handler=_handle)
