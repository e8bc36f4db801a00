"""Per-purpose seed derivation from one master seed.

Every random draw in a run is made from a generator seeded by
``derive_seed(master, purpose)``. Purposes in use:

    world/latent                latent locations
    world/<modality>            observation map W_m, b_m
    noise/<dataset>/<modality>  observation noise of one dataset
    split/<dataset>             train/held-out split
    reference/<modality>        frozen reference encoder weights
    encoder/<id>                trainable encoder initialization
    stage/<name>                mini-batch shuffling of one stage
    baseline/<query>/<gallery>  random-baseline embeddings
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, purpose: str) -> int:
    """Return a 63-bit seed that is a pure function of (master, purpose)."""
    digest = hashlib.blake2b(
        f"{int(master)}:{purpose}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") >> 1


def rng_for(master: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, purpose))
