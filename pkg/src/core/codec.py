"""
Canonical binary encoding - length-prefixed fields in a fixed order
Every hashed or signed byte string in the system is produced here
"""

import struct
from typing import Optional


class DecodeError(Exception):
    """Raised when bytes cannot be decoded into the expected structure."""
    pass


_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class Encoder:
    """Append-only writer for canonical field encodings."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Encoder":
        self._parts.append(_U8.pack(value))
        return self

    def u32(self, value: int) -> "Encoder":
        self._parts.append(_U32.pack(value))
        return self

    def u64(self, value: int) -> "Encoder":
        self._parts.append(_U64.pack(value))
        return self

    def flag(self, value: bool) -> "Encoder":
        return self.u8(1 if value else 0)

    def blob(self, data: bytes) -> "Encoder":
        self._parts.append(_U32.pack(len(data)))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> "Encoder":
        return self.blob(value.encode("utf-8"))

    def optional_blob(self, data: Optional[bytes]) -> "Encoder":
        self.flag(data is not None)
        if data is not None:
            self.blob(data)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Decoder:
    """Strict reader: every malformed input raises DecodeError."""

    def __init__(self, data: bytes):
        self._data = memoryview(bytes(data))
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def _take(self, size: int) -> bytes:
        if size < 0 or self._pos + size > len(self._data):
            raise DecodeError(
                f"truncated input: need {size} bytes at offset {self._pos}, "
                f"have {self.remaining}"
            )
        chunk = self._data[self._pos:self._pos + size].tobytes()
        self._pos += size
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def flag(self) -> bool:
        value = self.u8()
        if value not in (0, 1):
            raise DecodeError(f"invalid flag byte {value}")
        return value == 1

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError(f"invalid utf-8 text: {e}") from e

    def optional_blob(self) -> Optional[bytes]:
        return self.blob() if self.flag() else None

    def count(self, minimum_item_size: int = 1) -> int:
        """Read a u32 element count, rejecting counts the input cannot hold."""
        value = self.u32()
        if value * max(minimum_item_size, 1) > self.remaining:
            raise DecodeError(f"element count {value} exceeds remaining input")
        return value

    def finish(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes after message")
