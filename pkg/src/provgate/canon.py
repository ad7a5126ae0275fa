"""Canonical length-prefixed binary encoding.

Used everywhere a byte-stable form is needed: block hashing, template
digests, chain serialization, and CoAP config payloads. The rules are
fixed so digests are reproducible across languages and releases:

    integers      big-endian, fixed width (u8 / u16 / u32 / u64)
    byte strings  u32 length prefix, then the raw bytes
    text          UTF-8, encoded as a byte string
    sequences     u32 element count, then the elements back to back

Field order is part of each caller's contract and documented there.
"""

from __future__ import annotations

import struct
from typing import Iterable


class CanonDecodeError(ValueError):
    """Input does not parse as the expected canonical layout."""


def u8(value: int) -> bytes:
    return struct.pack(">B", value)


def u16(value: int) -> bytes:
    return struct.pack(">H", value)


def u32(value: int) -> bytes:
    return struct.pack(">I", value)


def u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def blob(data: bytes) -> bytes:
    return u32(len(data)) + data


def text(value: str) -> bytes:
    return blob(value.encode("utf-8"))


def str_map(items: Iterable[tuple[str, str]]) -> bytes:
    pairs = list(items)
    out = [u32(len(pairs))]
    for key, value in pairs:
        out.append(text(key))
        out.append(text(value))
    return b"".join(out)


class Reader:
    """Sequential decoder over a byte buffer; never reads past the end."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def take(self, n: int) -> bytes:
        if n < 0 or n > self.remaining:
            raise CanonDecodeError(f"need {n} bytes, have {self.remaining}")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CanonDecodeError("invalid UTF-8 in text field") from exc

    def str_map(self) -> dict[str, str]:
        count = self.u32()
        out: dict[str, str] = {}
        for _ in range(count):
            key = self.text()
            out[key] = self.text()
        return out

    def expect_eof(self) -> None:
        if self.remaining:
            raise CanonDecodeError(f"{self.remaining} trailing bytes")
