import hashlib
import struct

import numpy as np

from app.core.errors import FormatError


def content_hash(data: bytes) -> int:
    """64-bit digest stored in bitstream headers and bundle manifests."""

    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


class BinaryWriter:
    """Little-endian record builder."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def pack(self, fmt: str, *values) -> None:
        self._buf += struct.pack("<" + fmt, *values)

    def raw(self, data: bytes) -> None:
        self._buf += data

    def text(self, value: str) -> None:
        encoded = value.encode("utf-8")
        self.pack("I", len(encoded))
        self.raw(encoded)

    def array(self, values: np.ndarray, dtype: str) -> None:
        self.raw(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class BinaryReader:
    """Little-endian cursor; every short read is a FormatError naming the file kind."""

    def __init__(self, data: bytes, kind: str) -> None:
        self.data = data
        self.kind = kind
        self.offset = 0

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise FormatError(f"truncated {self.kind} file at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def text(self, limit: int = 256) -> str:
        size = self.unpack("I")
        if size > limit:
            raise FormatError(f"{self.kind} file has an implausible string length {size}")
        try:
            return self.take(size).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.kind} file has an undecodable string") from exc

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype).copy()

    def magic(self, expected: bytes) -> None:
        found = bytes(self.data[self.offset : self.offset + len(expected)])
        if found != expected:
            raise FormatError(f"not a {self.kind} file: magic {found!r}, expected {expected!r}")
        self.offset += len(expected)

    def done(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(f"{len(self.data) - self.offset} unexpected trailing bytes in {self.kind} file")
