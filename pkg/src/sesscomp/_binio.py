"""Shared little-endian binary reader/writer helpers for the toolkit's file formats."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, TruncatedFileError


def pack_str(s: str) -> bytes:
    """u16 length prefix + UTF-8 bytes."""
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long for u16 length prefix: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


class Reader:
    """Offset-tracking byte reader that raises TruncatedFileError on underrun."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.off = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedFileError(
                f"{self.what}: truncated at byte {self.off}, needed {n} more"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4", count=count)

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8", count=count)

    def expect_end(self) -> None:
        if self.off != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.off} trailing bytes")
