"""GBDS dataset files and GBES embedding stores."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from pathlib import Path
from typing import Union

import numpy as np

from bindspace.binary import ByteReader, ByteWriter
from bindspace.errors import ConfigError, FormatError
from bindspace.synthworld import EvalBundle, PairedDataset

logger = logging.getLogger(__name__)

GBDS_MAGIC = b"GBDS"
GBDS_VERSION = 1
GBES_MAGIC = b"GBES"
GBES_VERSION = 1

_KIND_PAIRED = 0
_KIND_BUNDLE = 1

PathLike = Union[str, Path]


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def read_file(path: PathLike, what: str) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"{what} not found: {path}") from exc
    except IsADirectoryError as exc:
        raise FormatError(f"{what} path is a directory: {path}") from exc


def write_file(path: PathLike, data: bytes) -> str:
    """Write bytes, creating parent directories; returns the SHA-256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    digest = sha256_hex(data)
    logger.info("wrote %s bytes=%d sha256=%s", path, len(data), digest)
    return digest


# ---------------------------------------------------------------------------
# GBDS
# ---------------------------------------------------------------------------


def serialize_dataset(ds: PairedDataset) -> bytes:
    """GBDS: magic, version, name, kind, modality tags and dims, count,
    ids (u64), split bitset (1 = train), single-precision matrices."""
    out = ByteWriter().raw(GBDS_MAGIC).u32(GBDS_VERSION)
    out.text(ds.name).u8(_KIND_BUNDLE if isinstance(ds, EvalBundle) else _KIND_PAIRED)
    out.u32(len(ds.modalities))
    for m in ds.modalities:
        out.text(m).u32(ds.dim(m))
    out.u64(ds.size)
    out.raw(np.asarray(ds.ids, dtype="<u8").tobytes())
    out.raw(np.packbits(ds.train_mask.astype(np.uint8)).tobytes())
    for m in ds.modalities:
        out.floats(ds.observations[m], 4)
    return out.getvalue()


def deserialize_dataset(data: bytes) -> PairedDataset:
    r = ByteReader(data, "dataset file")
    r.magic(GBDS_MAGIC)
    r.version(GBDS_VERSION)
    name = r.text("dataset name")
    kind_offset = r.offset
    kind = r.u8("kind")
    if kind not in (_KIND_PAIRED, _KIND_BUNDLE):
        raise FormatError(f"unknown dataset kind {kind}", kind_offset)
    count_offset = r.offset
    n_modalities = r.u32("modality count")
    if n_modalities < 1 or n_modalities > 256:
        raise FormatError(f"implausible modality count {n_modalities}", count_offset)
    tags, dims = [], []
    for i in range(n_modalities):
        tags.append(r.text(f"modality {i} tag"))
        dims.append(r.u32(f"modality {i} dim"))
    if len(set(tags)) != len(tags):
        raise FormatError(f"duplicate modality tags {tags}", count_offset)
    n = r.u64("row count")
    ids_offset = r.offset
    ids = np.frombuffer(r.raw(8 * n, "ids"), dtype="<u8").astype(np.uint64)
    if len(np.unique(ids)) != n:
        raise FormatError("duplicate latent ids", ids_offset)
    mask_offset = r.offset
    packed = np.frombuffer(r.raw((n + 7) // 8, "split mask"), dtype=np.uint8)
    bits = np.unpackbits(packed)
    if bits[n:].any():
        raise FormatError("non-zero padding bits in split mask", mask_offset)
    mask = bits[:n].astype(bool)
    observations = {
        tag: r.floats(n * dim, 4, f"{tag} observations").reshape(n, dim)
        for tag, dim in zip(tags, dims)
    }
    r.finish()
    cls = EvalBundle if kind == _KIND_BUNDLE else PairedDataset
    return cls(name, tuple(tags), observations, ids, mask)


def load_dataset(path: PathLike) -> PairedDataset:
    return deserialize_dataset(read_file(path, "dataset file"))


# ---------------------------------------------------------------------------
# GBES
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class EmbeddingStore:
    modality: str
    ids: np.ndarray
    rows: np.ndarray

    def __post_init__(self) -> None:
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.ids):
            raise ConfigError(
                f"embedding store has {len(self.ids)} ids but rows of shape {self.rows.shape}"
            )

    @property
    def count(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def serialize_store(store: EmbeddingStore) -> bytes:
    out = ByteWriter().raw(GBES_MAGIC).u32(GBES_VERSION)
    out.text(store.modality).u64(store.count).u32(store.dim)
    out.raw(np.asarray(store.ids, dtype="<u8").tobytes())
    out.floats(store.rows, 4)
    return out.getvalue()


def deserialize_store(data: bytes) -> EmbeddingStore:
    r = ByteReader(data, "embedding store")
    r.magic(GBES_MAGIC)
    r.version(GBES_VERSION)
    modality = r.text("modality tag")
    n = r.u64("count")
    dim = r.u32("dim")
    ids = np.frombuffer(r.raw(8 * n, "ids"), dtype="<u8").astype(np.uint64)
    rows = r.floats(n * dim, 4, "embedding rows").reshape(n, dim)
    r.finish()
    return EmbeddingStore(modality, ids, rows)


def load_store(path: PathLike) -> EmbeddingStore:
    return deserialize_store(read_file(path, "embedding store"))
