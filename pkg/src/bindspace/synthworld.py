"""Seeded synthetic world of co-located observations.

Every location is a latent z ~ N(0, I). Modality m observes it as
``tanh(z W_m + b_m) + noise``, with W_m, b_m fixed by (master seed, m).
Text is the exception: it is a fixed column-orthonormal map of the
noiseless ground observation, so a text reference encoder derived from the
ground one embeds matched ground/text pairs to nearly the same point.

Latent index ranges are carved out contiguously, in this order: stage-1
pairs, stage-2 pairs, one range per extra modality (sorted by name), then
the evaluation locations. No index is shared between ranges.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from bindspace.encoder import MlpEncoder, reference_encoder
from bindspace.errors import ConfigError
from bindspace.models import WorldConfig
from bindspace.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class PairedDataset:
    """Row-aligned observations of several modalities.

    Row i of every matrix derives from latent ``ids[i]``. ``train_mask``
    selects the training rows; the rest are held out.
    """

    name: str
    modalities: Tuple[str, ...]
    observations: Dict[str, np.ndarray]
    ids: np.ndarray
    train_mask: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.ids)
        if len(self.train_mask) != n:
            raise ConfigError(f"{self.name}: split mask has {len(self.train_mask)} rows, expected {n}")
        for m in self.modalities:
            if self.observations[m].shape[0] != n:
                raise ConfigError(
                    f"{self.name}: modality {m!r} has {self.observations[m].shape[0]} rows, expected {n}"
                )

    @property
    def size(self) -> int:
        return len(self.ids)

    def dim(self, modality: str) -> int:
        return self.observations[self._check(modality)].shape[1]

    def _check(self, modality: str) -> str:
        if modality not in self.observations:
            raise ConfigError(
                f"dataset {self.name!r} has no modality {modality!r} (has {list(self.modalities)})"
            )
        return modality

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    @property
    def heldout_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.train_mask)

    def train(self, modality: str) -> np.ndarray:
        return self.observations[self._check(modality)][self.train_mask]

    def heldout(self, modality: str) -> np.ndarray:
        return self.observations[self._check(modality)][~self.train_mask]


class EvalBundle(PairedDataset):
    """Co-located tuples over every modality; all rows are held out."""

    def first(self, n: int) -> "EvalBundle":
        return EvalBundle(
            self.name,
            self.modalities,
            {m: v[:n] for m, v in self.observations.items()},
            self.ids[:n],
            self.train_mask[:n],
        )


@dataclasses.dataclass(frozen=True, eq=False)
class World:
    config: WorldConfig
    latents: np.ndarray
    datasets: Dict[str, PairedDataset]
    bundle: EvalBundle

    @property
    def stage1(self) -> PairedDataset:
        return self.datasets["stage1"]

    @property
    def stage2(self) -> PairedDataset:
        return self.datasets["stage2"]


# ---------------------------------------------------------------------------
# Observation maps
# ---------------------------------------------------------------------------


def _single(values: np.ndarray) -> np.ndarray:
    return values.astype(np.float32).astype(np.float64)


def observation_map(cfg: WorldConfig, modality: str) -> Tuple[np.ndarray, np.ndarray]:
    """(W_m, b_m) for a directly observed modality."""
    rng = rng_for(cfg.seed, f"world/{modality}")
    dim = cfg.modality_dims[modality]
    weight = rng.normal(0.0, 1.0 / np.sqrt(cfg.latent_dim), size=(cfg.latent_dim, dim))
    bias = rng.normal(0.0, 0.5, size=(1, dim))
    return weight, bias


def text_map(cfg: WorldConfig) -> np.ndarray:
    """ground_dim x text_dim matrix Q with orthonormal rows (Q Q^T = I)."""
    rng = rng_for(cfg.seed, "world/text")
    gauss = rng.normal(size=(cfg.text_dim, cfg.ground_dim))
    q, r = np.linalg.qr(gauss)
    # fix the sign convention so Q depends only on the draw
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q.T


def clean_observations(cfg: WorldConfig, modality: str, latents: np.ndarray) -> np.ndarray:
    """Noise-free observations of ``modality`` for rows of latents."""
    if modality == "text":
        return clean_observations(cfg, "ground", latents) @ text_map(cfg)
    if modality not in cfg.modality_dims:
        raise ConfigError(f"unknown modality {modality!r}")
    weight, bias = observation_map(cfg, modality)
    return np.tanh(latents @ weight + bias)


def _observe(cfg: WorldConfig, modality: str, latents: np.ndarray, purpose: str) -> np.ndarray:
    clean = clean_observations(cfg, modality, latents)
    if cfg.noise_std > 0:
        clean = clean + cfg.noise_std * rng_for(cfg.seed, purpose).normal(size=clean.shape)
    return _single(clean)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def latent_ranges(cfg: WorldConfig) -> Dict[str, Tuple[int, int]]:
    """Half-open latent index range per dataset, plus "eval"."""
    ranges: Dict[str, Tuple[int, int]] = {}
    start = 0
    for name in ["stage1", "stage2"] + [f"satellite-{m}" for m in sorted(cfg.extra_modalities)]:
        n = cfg.dataset_pairs(name)
        ranges[name] = (start, start + n)
        start += n
    ranges["eval"] = (start, start + cfg.eval_locations)
    return ranges


def _split_mask(cfg: WorldConfig, name: str, n: int) -> np.ndarray:
    heldout = int(round(n * cfg.heldout_fraction))
    if n - heldout < 2:
        raise ConfigError(f"dataset {name!r}: {n} pairs leave fewer than 2 training rows")
    order = rng_for(cfg.seed, f"split/{name}").permutation(n)
    mask = np.ones(n, dtype=bool)
    mask[order[:heldout]] = False
    return mask


def _paired(cfg: WorldConfig, name: str, modalities: Iterable[str], latents: np.ndarray, lo: int, hi: int) -> PairedDataset:
    modalities = tuple(modalities)
    z = latents[lo:hi]
    return PairedDataset(
        name,
        modalities,
        {m: _observe(cfg, m, z, f"noise/{name}/{m}") for m in modalities},
        np.arange(lo, hi, dtype=np.uint64),
        _split_mask(cfg, name, hi - lo),
    )


def generate_world(cfg: WorldConfig) -> World:
    """Build every dataset and the evaluation bundle; pure in ``cfg``."""
    ranges = latent_ranges(cfg)
    total = ranges["eval"][1]
    latents = rng_for(cfg.seed, "world/latent").normal(size=(total, cfg.latent_dim))

    datasets: Dict[str, PairedDataset] = {}
    for name, modalities in cfg.dataset_modalities.items():
        lo, hi = ranges[name]
        datasets[name] = _paired(cfg, name, modalities, latents, lo, hi)

    lo, hi = ranges["eval"]
    modalities = tuple(cfg.modality_dims)
    bundle = EvalBundle(
        "eval",
        modalities,
        {m: _observe(cfg, m, latents[lo:hi], f"noise/eval/{m}") for m in modalities},
        np.arange(lo, hi, dtype=np.uint64),
        np.zeros(hi - lo, dtype=bool),
    )
    logger.info(
        "generated world seed=%d datasets=%s eval_locations=%d",
        cfg.seed,
        {k: d.size for k, d in datasets.items()},
        bundle.size,
    )
    return World(cfg, latents, datasets, bundle)


def eval_bundle(world: World, n_eval: Optional[int] = None) -> EvalBundle:
    """The first ``n_eval`` evaluation tuples (all of them by default)."""
    available = world.bundle.size
    if n_eval is None:
        return world.bundle
    if n_eval < 0 or n_eval > available:
        raise ConfigError(f"n_eval={n_eval} exceeds the {available} held-out locations")
    return world.bundle.first(n_eval)


def world_seeds(cfg: WorldConfig) -> Dict[str, int]:
    """Every derived seed the world uses, keyed by purpose."""
    purposes: List[str] = ["world/latent"]
    purposes += [f"world/{m}" for m in cfg.modality_dims]
    for name, modalities in cfg.dataset_modalities.items():
        purposes.append(f"split/{name}")
        purposes += [f"noise/{name}/{m}" for m in modalities]
    purposes += [f"noise/eval/{m}" for m in cfg.modality_dims]
    return {p: derive_seed(cfg.seed, p) for p in purposes}


# ---------------------------------------------------------------------------
# Frozen reference encoders
# ---------------------------------------------------------------------------


def reference_encoders(
    cfg: WorldConfig, joint_dim: int, modalities: Iterable[str]
) -> Dict[str, MlpEncoder]:
    """Frozen reference encoders for the requested modalities.

    The text encoder is derived from the ground encoder through the text map,
    so it is pre-aligned with it.
    """
    dims = cfg.modality_dims
    out: Dict[str, MlpEncoder] = {}
    wanted = list(modalities)
    for m in wanted:
        if m not in dims:
            raise ConfigError(f"unknown modality {m!r}")
        seed = derive_seed(cfg.seed, f"reference/{m}")
        if m == "text":
            ground = reference_encoder(dims["ground"], joint_dim, derive_seed(cfg.seed, "reference/ground"))
            weight = text_map(cfg).T @ ground.weights[0]
            out[m] = reference_encoder(dims["text"], joint_dim, seed, weight=weight)
        else:
            out[m] = reference_encoder(dims[m], joint_dim, seed)
    return out
