"""Little-endian record primitives shared by the GB* file formats."""

from __future__ import annotations

import struct
from typing import List

import numpy as np

from bindspace.errors import FormatError

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class ByteWriter:
    def __init__(self) -> None:
        self._parts: List[bytes] = []

    def raw(self, data: bytes) -> "ByteWriter":
        self._parts.append(bytes(data))
        return self

    def u8(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack("<B", value))

    def u32(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack("<I", value))

    def u64(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack("<Q", value))

    def f64(self, value: float) -> "ByteWriter":
        return self.raw(struct.pack("<d", value))

    def text(self, value: str) -> "ByteWriter":
        """UTF-8 string with a u32 length prefix."""
        data = value.encode("utf-8")
        return self.u32(len(data)).raw(data)

    def blob(self, data: bytes) -> "ByteWriter":
        """Opaque record with a u64 length prefix."""
        return self.u64(len(data)).raw(data)

    def floats(self, values: np.ndarray, precision: int) -> "ByteWriter":
        """Row-major IEEE-754 values, 4 or 8 bytes each."""
        return self.raw(np.ascontiguousarray(values, dtype=_DTYPES[precision]).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """Cursor over a byte string; every failure names the offending offset."""

    def __init__(self, data: bytes, what: str = "file") -> None:
        self.data = bytes(data)
        self.offset = 0
        self.what = what

    def _take(self, n: int, field: str) -> bytes:
        if n < 0 or self.offset + n > len(self.data):
            raise FormatError(
                f"truncated {self.what}: need {n} bytes for {field}, "
                f"{len(self.data) - self.offset} left",
                self.offset,
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def raw(self, n: int, field: str = "bytes") -> bytes:
        return self._take(n, field)

    def magic(self, expected: bytes) -> None:
        start = self.offset
        got = self._take(len(expected), "magic")
        if got != expected:
            raise FormatError(
                f"not a {expected.decode()} {self.what}: magic {got!r}", start
            )

    def u8(self, field: str = "u8") -> int:
        return struct.unpack("<B", self._take(1, field))[0]

    def u32(self, field: str = "u32") -> int:
        return struct.unpack("<I", self._take(4, field))[0]

    def u64(self, field: str = "u64") -> int:
        return struct.unpack("<Q", self._take(8, field))[0]

    def f64(self, field: str = "f64") -> float:
        return struct.unpack("<d", self._take(8, field))[0]

    def text(self, field: str = "text") -> str:
        n = self.u32(f"{field} length")
        start = self.offset
        try:
            return self._take(n, field).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{field} is not valid UTF-8", start) from exc

    def blob(self, field: str = "record") -> bytes:
        return self._take(self.u64(f"{field} length"), field)

    def floats(self, count: int, precision: int, field: str = "values") -> np.ndarray:
        if precision not in _DTYPES:
            raise FormatError(f"unsupported float precision {precision}", self.offset)
        start = self.offset
        raw = self._take(count * precision, field)
        values = np.frombuffer(raw, dtype=_DTYPES[precision]).astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise FormatError(f"non-finite entries in {field}", start)
        return values

    def version(self, supported: int) -> int:
        start = self.offset
        got = self.u32("version")
        if got != supported:
            raise FormatError(f"unsupported {self.what} version {got}", start)
        return got

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.offset} trailing bytes after {self.what}",
                self.offset,
            )
