"""Little-endian helpers shared by the BIDH / BIDF / BIDS containers."""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import FormatError

_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
F64 = np.dtype("<f8")


class Writer:
    def __init__(self, magic: bytes, version: int):
        self.buf = io.BytesIO()
        self.buf.write(magic)
        self.u32(version)

    def u32(self, x: int) -> None:
        self.buf.write(_U32.pack(int(x)))

    def i32(self, x: int) -> None:
        self.buf.write(_I32.pack(int(x)))

    def f64(self, arr) -> None:
        self.buf.write(np.ascontiguousarray(arr, dtype=F64).tobytes())

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf.write(raw)

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class Reader:
    def __init__(self, data: bytes, magic: bytes, versions: tuple[int, ...]):
        self.data = data
        self.pos = 0
        got = self._take(len(magic))
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        self.version = self.u32()
        if self.version not in versions:
            raise FormatError(f"unsupported {magic.decode()} version {self.version}")

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def i32(self) -> int:
        return _I32.unpack(self._take(4))[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * count), dtype=F64).astype(np.float64)

    def text(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")
