"""Modality encoders: trainable MLPs and frozen seeded reference encoders."""

from __future__ import annotations

import dataclasses
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bindspace import numeric as nm
from bindspace.binary import ByteReader, ByteWriter
from bindspace.errors import ConfigError, DimensionError, FormatError

GBEC_MAGIC = b"GBEC"
GBEC_VERSION = 1

_ACTIVATION_TAGS = {"relu": 0, "tanh": 1}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}

_FLAG_FROZEN = 0x01
_FLAG_REFERENCE = 0x02


def _single(values: np.ndarray) -> np.ndarray:
    """Round to the nearest single-precision value, kept as float64."""
    return values.astype(np.float32).astype(np.float64)


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=np.float64)
    values.setflags(write=False)
    return values


@dataclasses.dataclass(frozen=True, eq=False)
class MlpEncoder:
    """Feed-forward encoder ``x -> act(x W0 + b0) -> ... -> x Wn + bn``.

    Hidden layers apply the activation; a single-layer encoder (no hidden
    layers) applies it to its output, which is how reference encoders are
    built. Weights are stored (fan_in, fan_out) so rows are samples.
    """

    dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: str = "tanh"
    frozen: bool = False
    seed: int = 0
    reference: bool = False

    def __post_init__(self) -> None:
        if len(self.dims) < 2:
            raise ConfigError("an encoder needs at least input and output dimensions")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ConfigError("weights/biases do not match the layer count")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.dims[i], self.dims[i + 1])
            if w.shape != expected or b.shape != (1, self.dims[i + 1]):
                raise ConfigError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} incompatible with {expected}"
                )
        if self.activation not in _ACTIVATION_TAGS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{i}"] = w
            params[f"b{i}"] = b
        return params

    def with_parameters(self, params: Dict[str, np.ndarray]) -> "MlpEncoder":
        n = self.layer_count
        return dataclasses.replace(
            self,
            weights=tuple(_readonly(params[f"W{i}"]) for i in range(n)),
            biases=tuple(_readonly(params[f"b{i}"]) for i in range(n)),
        )

    def _applies_activation(self, layer: int) -> bool:
        return layer < self.layer_count - 1 or self.layer_count == 1


def init_encoder(dims: Sequence[int], activation: str = "tanh", seed: int = 0) -> MlpEncoder:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"encoder dimensions must all be >= 1, got {list(dims)}")
    if activation not in _ACTIVATION_TAGS:
        raise ConfigError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(_readonly(_single(rng.uniform(-bound, bound, size=(fan_in, fan_out)))))
        biases.append(_readonly(np.zeros((1, fan_out))))
    return MlpEncoder(dims, tuple(weights), tuple(biases), activation, False, int(seed))


def reference_encoder(
    d_in: int, d_joint: int, seed: int, weight: Optional[np.ndarray] = None
) -> MlpEncoder:
    """A frozen single-layer tanh encoder standing in for a pretrained backbone.

    ``weight`` overrides the seeded Glorot draw; it is used to derive an
    encoder that is pre-aligned with another one.
    """
    enc = init_encoder((d_in, d_joint), "tanh", seed)
    if weight is not None:
        if weight.shape != (d_in, d_joint):
            raise DimensionError(f"reference weight {weight.shape} is not {(d_in, d_joint)}")
        enc = dataclasses.replace(enc, weights=(_readonly(_single(weight)),))
    return dataclasses.replace(enc, frozen=True, reference=True)


def init_from(src: MlpEncoder, dst_dims: Sequence[int]) -> MlpEncoder:
    """Trainable copy of ``src``; ``dst_dims`` must match its layer shapes."""
    dst_dims = tuple(int(d) for d in dst_dims)
    if dst_dims != src.dims:
        mismatched = [
            f"layer {i}: {src.dims[i]}x{src.dims[i + 1]} vs {dst_dims[i]}x{dst_dims[i + 1]}"
            for i in range(min(len(src.dims), len(dst_dims)) - 1)
            if (src.dims[i], src.dims[i + 1]) != (dst_dims[i], dst_dims[i + 1])
        ]
        if len(src.dims) != len(dst_dims):
            mismatched.append(f"layer count {len(src.dims) - 1} vs {len(dst_dims) - 1}")
        raise ConfigError(f"cannot initialize from source encoder: {'; '.join(mismatched)}")
    return dataclasses.replace(src, frozen=False, reference=False)


def freeze(enc: MlpEncoder) -> MlpEncoder:
    return enc if enc.frozen else dataclasses.replace(enc, frozen=True)


def forward(enc: MlpEncoder, batch: np.ndarray) -> np.ndarray:
    """Raw (un-normalized) embeddings for a k x d_in batch."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != enc.input_dim:
        raise DimensionError(
            f"encoder expects {enc.input_dim} input columns, got batch of shape {x.shape}"
        )
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        x = x @ w + b
        if enc._applies_activation(i):
            x = np.maximum(x, 0.0) if enc.activation == "relu" else np.tanh(x)
    return x


def forward_graph(
    enc: MlpEncoder, batch: nm.Node
) -> Tuple[nm.Node, Dict[str, nm.Node]]:
    """Differentiable forward pass.

    Returns the output node and the parameter leaves. Frozen encoders
    contribute constant leaves only, so no adjoint ever reaches them.
    """
    if batch.shape[1] != enc.input_dim:
        raise DimensionError(
            f"encoder expects {enc.input_dim} input columns, got batch of shape {batch.shape}"
        )
    leaf = nm.constant if enc.frozen else nm.parameter
    params = {name: leaf(value) for name, value in enc.parameters().items()}
    x = batch
    for i in range(enc.layer_count):
        x = nm.add(nm.matmul(x, params[f"W{i}"]), params[f"b{i}"])
        if enc._applies_activation(i):
            x = nm.activation(x, enc.activation)
    return x, ({} if enc.frozen else params)


# ---------------------------------------------------------------------------
# GBEC checkpoint format
# ---------------------------------------------------------------------------


def serialize(enc: MlpEncoder, precision: int = 4) -> bytes:
    """GBEC bytes: magic, version, activation, flags, precision, seed, dims, weights, biases."""
    if precision not in (4, 8):
        raise ConfigError(f"precision must be 4 or 8 bytes, got {precision}")
    flags = (_FLAG_FROZEN if enc.frozen else 0) | (_FLAG_REFERENCE if enc.reference else 0)
    out = ByteWriter().raw(GBEC_MAGIC).u32(GBEC_VERSION)
    out.u8(_ACTIVATION_TAGS[enc.activation]).u8(flags).u8(precision).u64(enc.seed)
    out.u32(enc.layer_count)
    for d in enc.dims:
        out.u32(d)
    for w, b in zip(enc.weights, enc.biases):
        out.floats(w, precision)
        out.floats(b, precision)
    return out.getvalue()


def read_encoder(reader: ByteReader) -> MlpEncoder:
    reader.magic(GBEC_MAGIC)
    reader.version(GBEC_VERSION)
    tag_offset = reader.offset
    tag = reader.u8("activation tag")
    if tag not in _TAG_ACTIVATIONS:
        raise FormatError(f"unknown activation tag {tag}", tag_offset)
    flags = reader.u8("flags")
    precision = reader.u8("precision")
    if precision not in (4, 8):
        raise FormatError(f"unsupported float precision {precision}", reader.offset - 1)
    seed = reader.u64("seed")
    count_offset = reader.offset
    layers = reader.u32("layer count")
    if layers < 1 or layers > 1024:
        raise FormatError(f"implausible layer count {layers}", count_offset)
    dims = tuple(reader.u32(f"dim {i}") for i in range(layers + 1))
    if any(d < 1 for d in dims):
        raise FormatError(f"zero dimension in {list(dims)}", count_offset)
    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for i in range(layers):
        w = reader.floats(dims[i] * dims[i + 1], precision, f"layer {i} weights")
        b = reader.floats(dims[i + 1], precision, f"layer {i} biases")
        weights.append(_readonly(w.reshape(dims[i], dims[i + 1])))
        biases.append(_readonly(b.reshape(1, dims[i + 1])))
    return MlpEncoder(
        dims,
        tuple(weights),
        tuple(biases),
        _TAG_ACTIVATIONS[tag],
        bool(flags & _FLAG_FROZEN),
        seed,
        bool(flags & _FLAG_REFERENCE),
    )


def deserialize(data: bytes) -> MlpEncoder:
    reader = ByteReader(data, "encoder checkpoint")
    enc = read_encoder(reader)
    reader.finish()
    return enc
