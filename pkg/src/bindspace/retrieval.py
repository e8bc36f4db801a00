"""Cross-modal retrieval: cosine ranking, Recall@k and median rank."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from bindspace.encoder import MlpEncoder, forward
from bindspace.errors import ConfigError, ContractError, DegenerateInputError, DimensionError
from bindspace.models import RetrievalReport
from bindspace.numeric import NORM_FLOOR
from bindspace.seeding import rng_for
from bindspace.synthworld import PairedDataset

logger = logging.getLogger(__name__)

REPORT_HEADER = ("query_modality", "gallery_modality", "N", "k", "recall_percent", "median_rank", "baseline")
RANKS_HEADER = ("query_modality", "gallery_modality", "baseline", "query", "rank")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    bad = np.flatnonzero(norms[:, 0] < NORM_FLOOR)
    if bad.size:
        raise DegenerateInputError("cannot normalize a zero-length embedding", int(bad[0]))
    return x / norms


def similarity_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Cosine similarity of every query row against every gallery row."""
    queries = np.atleast_2d(queries)
    gallery = np.atleast_2d(gallery)
    if queries.shape[1] != gallery.shape[1]:
        raise DimensionError(
            f"queries have dim {queries.shape[1]} but gallery has dim {gallery.shape[1]}"
        )
    return normalize_rows(queries) @ normalize_rows(gallery).T


def rank_of_truth(sim: np.ndarray, truth: Sequence[int]) -> np.ndarray:
    """1-based rank of each query's true gallery item.

    Items are ordered by descending similarity; equal scores are ordered by
    ascending gallery index.
    """
    sim = np.atleast_2d(sim)
    truth = np.asarray(truth, dtype=np.int64)
    n_q, n = sim.shape
    if truth.shape != (n_q,):
        raise ContractError(f"expected {n_q} truth indices, got {truth.shape[0] if truth.ndim else 0}")
    if n_q and (truth.min() < 0 or truth.max() >= n):
        raise ContractError(f"truth indices must lie in [0, {n}), got {truth.min()}..{truth.max()}")
    rows = np.arange(n_q)
    true_score = sim[rows, truth][:, None]
    above = (sim > true_score).sum(axis=1)
    tied_before = ((sim == true_score) & (np.arange(n)[None, :] < truth[:, None])).sum(axis=1)
    return 1 + above + tied_before


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Percentage of ranks <= k."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ContractError("recall needs at least one rank")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    return 100.0 * float(np.count_nonzero(ranks <= k)) / ranks.size


def median_rank(ranks: Sequence[int]) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ContractError("median rank needs at least one rank")
    return float(np.median(ranks))


def top_k(queries: np.ndarray, gallery: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and scores of the k most similar gallery rows per query."""
    n = np.atleast_2d(gallery).shape[0]
    if k < 1 or k > n:
        raise ConfigError(f"k={k} must lie in [1, {n}] for a gallery of {n} rows")
    sim = similarity_matrix(queries, gallery)
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(sim, order, axis=1)


def embed(encoder: MlpEncoder, observations: np.ndarray) -> np.ndarray:
    """Unit-norm joint-space embeddings."""
    return normalize_rows(forward(encoder, observations))


def build_report(
    query: str,
    gallery: str,
    sim: np.ndarray,
    ks: Iterable[int],
    baseline: bool = False,
) -> RetrievalReport:
    """Report for a square similarity matrix whose diagonal holds the true pairs."""
    n = sim.shape[1]
    ranks = rank_of_truth(sim, np.arange(sim.shape[0]))
    return RetrievalReport(
        query_modality=query,
        gallery_modality=gallery,
        gallery_size=n,
        ranks=ranks.tolist(),
        recall={k: recall_at_k(ranks, k) for k in sorted(set(ks))},
        median_rank=median_rank(ranks),
        baseline=baseline,
    )


def evaluate_all_pairs(
    encoders: Mapping[str, MlpEncoder],
    bundle: PairedDataset,
    ks: Iterable[int] = (1, 5, 10),
    seed: int = 0,
) -> List[RetrievalReport]:
    """A trained and a random-baseline report for every ordered modality pair."""
    if bundle.size == 0:
        raise ContractError("evaluation bundle is empty")
    ks = sorted(set(ks))
    missing = [m for m in bundle.modalities if m not in encoders]
    if missing:
        raise ConfigError(f"no encoder for modalities {missing}")
    embeddings = {m: embed(encoders[m], bundle.observations[m]) for m in bundle.modalities}

    reports: List[RetrievalReport] = []
    for q in bundle.modalities:
        for g in bundle.modalities:
            if q == g:
                continue
            reports.append(build_report(q, g, embeddings[q] @ embeddings[g].T, ks))
            rng = rng_for(seed, f"baseline/{q}/{g}")
            shape = embeddings[q].shape
            sim = similarity_matrix(rng.normal(size=shape), rng.normal(size=shape))
            reports.append(build_report(q, g, sim, ks, baseline=True))
            logger.debug("evaluated %s->%s", q, g)
    for r in reports:
        if not r.baseline:
            logger.info(
                "retrieval %s->%s N=%d median_rank=%.1f recall=%s",
                r.query_modality, r.gallery_modality, r.gallery_size, r.median_rank,
                {k: round(v, 2) for k, v in r.recall.items()},
            )
    return reports


def find_report(
    reports: Iterable[RetrievalReport], query: str, gallery: str, baseline: bool = False
) -> RetrievalReport:
    for r in reports:
        if (r.query_modality, r.gallery_modality, r.baseline) == (query, gallery, baseline):
            return r
    raise ConfigError(f"no {'baseline ' if baseline else ''}report for {query}->{gallery}")


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _writer(path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path, path.open("w", newline="")


def write_report_csv(reports: Sequence[RetrievalReport], path: Union[str, Path]) -> None:
    path, fh = _writer(path)
    with fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in reports:
            for k, recall in r.recall.items():
                writer.writerow(
                    [
                        r.query_modality, r.gallery_modality, r.gallery_size, k,
                        f"{recall:.4f}", f"{r.median_rank:g}", "random" if r.baseline else "trained",
                    ]
                )
    logger.info("wrote %s reports=%d", path, len(reports))


def write_ranks_csv(reports: Sequence[RetrievalReport], path: Union[str, Path]) -> None:
    path, fh = _writer(path)
    with fh:
        writer = csv.writer(fh)
        writer.writerow(RANKS_HEADER)
        for r in reports:
            tag = "random" if r.baseline else "trained"
            for i, rank in enumerate(r.ranks):
                writer.writerow([r.query_modality, r.gallery_modality, tag, i, rank])


def write_topk_csv(
    query_ids: np.ndarray,
    gallery_ids: np.ndarray,
    indices: np.ndarray,
    scores: np.ndarray,
    path: Union[str, Path],
) -> None:
    path, fh = _writer(path)
    with fh:
        writer = csv.writer(fh)
        writer.writerow(("query_id", "rank", "gallery_id", "score"))
        for qi, (row, row_scores) in enumerate(zip(indices, scores)):
            for rank, (j, s) in enumerate(zip(row, row_scores), start=1):
                writer.writerow([int(query_ids[qi]), rank, int(gallery_ids[j]), f"{s:.6f}"])
    logger.info("wrote %s queries=%d", path, len(indices))
