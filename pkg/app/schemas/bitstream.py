from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, PrivateAttr, field_validator, model_validator

from app.schemas.quantization import QuantizerRole

BITSTREAM_MAGIC = b"PRBS"
BITSTREAM_VERSION = 1
HEADER_BYTES = 4 + 2 + 1 + 8 + 8 + 4


class CodedFrame(BaseModel):
    """Quantizer decisions and codeword indices for one frame.

    A flag of 1 selects Q_L for that component. ``pitch_code`` is set on the
    first frame of every 4-frame packet.
    """

    sq_flag: int = Field(..., ge=0, le=1)
    vq_flag: int = Field(..., ge=0, le=1)
    sq_indices: Tuple[int, ...] = ()
    vq_indices: Tuple[int, ...] = ()
    pitch_code: Optional[int] = Field(default=None, ge=0, lt=1 << 11)

    @model_validator(mode="after")
    def index_counts(self):
        if len(self.sq_indices) > 1:
            raise ValueError("at most one scalar index per frame")
        if len(self.vq_indices) > 2:
            raise ValueError("at most two vector stages per frame")
        return self


class HuffmanTable(BaseModel):
    """Canonical prefix code given by per-symbol code lengths.

    Codes are assigned shortest first, ties by symbol id, so both codec sides
    rebuild identical tables from the lengths alone.
    """

    lengths: List[int]
    _codes: List[int] = PrivateAttr(default_factory=list)
    _first_code: Dict[int, int] = PrivateAttr(default_factory=dict)
    _first_index: Dict[int, int] = PrivateAttr(default_factory=dict)
    _count: Dict[int, int] = PrivateAttr(default_factory=dict)
    _sorted_symbols: List[int] = PrivateAttr(default_factory=list)

    @field_validator("lengths")
    @classmethod
    def kraft(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("a Huffman table needs at least one symbol")
        if any(length < 0 for length in value):
            raise ValueError("code lengths must be non-negative")
        if len(value) == 1:
            if value[0] != 0:
                raise ValueError("a single-symbol table uses a zero-length code")
        elif any(length == 0 for length in value):
            raise ValueError("zero-length codes only exist for single-symbol tables")
        max_len = max(value)
        if sum(1 << (max_len - length) for length in value) > (1 << max_len):
            raise ValueError("code lengths violate the Kraft inequality")
        return value

    def model_post_init(self, __context) -> None:
        order = sorted(range(len(self.lengths)), key=lambda s: (self.lengths[s], s))
        codes = [0] * len(self.lengths)
        code, prev_len = 0, None
        for symbol in order:
            length = self.lengths[symbol]
            if prev_len is not None:
                code = (code + 1) << (length - prev_len)
            codes[symbol] = code
            if length not in self._first_code:
                self._first_code[length] = code
                self._first_index[length] = len(self._sorted_symbols)
                self._count[length] = 0
            self._count[length] += 1
            self._sorted_symbols.append(symbol)
            prev_len = length
        self._codes = codes

    @property
    def size(self) -> int:
        return len(self.lengths)

    def code(self, symbol: int) -> Tuple[int, int]:
        """(code value, bit length) of a symbol."""

        return self._codes[symbol], self.lengths[symbol]

    def lookup(self, code: int, length: int) -> Optional[int]:
        """Symbol whose code is ``code`` with ``length`` bits, if any."""

        first = self._first_code.get(length)
        if first is None:
            return None
        offset = code - first
        if 0 <= offset < self._count[length]:
            return self._sorted_symbols[self._first_index[length] + offset]
        return None

    @property
    def max_length(self) -> int:
        return max(self.lengths)


class BitstreamHeader(BaseModel):
    version: int = BITSTREAM_VERSION
    profile_id: int = Field(..., ge=0, le=255)
    weights_hash: int = Field(..., ge=0, lt=1 << 64)
    codebook_hash: int = Field(..., ge=0, lt=1 << 64)
    frame_count: int = Field(..., ge=0, lt=1 << 32)


class Bitstream(BaseModel):
    header: BitstreamHeader
    frames: List[CodedFrame] = Field(default_factory=list)
    data: bytes = b""

    @property
    def payload_bits(self) -> int:
        return 8 * (len(self.data) - HEADER_BYTES)
