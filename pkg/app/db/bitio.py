"""MSB-first bit packing shared by the Huffman coder and the bitstream packer."""

from app.core.errors import CorruptStreamError


class BitWriter:
    def __init__(self) -> None:
        self._buf = bytearray()
        self._cur = 0
        self._nbits = 0
        self.bit_length = 0

    def write(self, value: int, length: int) -> None:
        """Append the low ``length`` bits of ``value``, most significant first."""

        if length < 0 or (length and value >> length):
            raise ValueError(f"value {value} does not fit in {length} bits")
        for i in range(length - 1, -1, -1):
            self._cur = (self._cur << 1) | ((value >> i) & 1)
            self._nbits += 1
            if self._nbits == 8:
                self._buf.append(self._cur)
                self._cur = 0
                self._nbits = 0
        self.bit_length += length

    def getvalue(self) -> bytes:
        """Packed bytes with the final partial byte zero-padded."""

        out = bytearray(self._buf)
        if self._nbits:
            out.append(self._cur << (8 - self._nbits))
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes) -> None:
        self.data = bytes(data)
        self.position = 0

    @property
    def remaining(self) -> int:
        return 8 * len(self.data) - self.position

    def read_bit(self) -> int:
        if self.position >= 8 * len(self.data):
            raise CorruptStreamError("unexpected end of bitstream")
        byte = self.data[self.position >> 3]
        bit = (byte >> (7 - (self.position & 7))) & 1
        self.position += 1
        return bit

    def read(self, length: int) -> int:
        if length > self.remaining:
            raise CorruptStreamError(f"unexpected end of bitstream: wanted {length} bits, {self.remaining} left")
        value = 0
        for _ in range(length):
            value = (value << 1) | self.read_bit()
        return value
