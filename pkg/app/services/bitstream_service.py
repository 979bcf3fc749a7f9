"""Packetized wire format.

Header (big-endian): magic "PRBS", u16 version, u8 profile id, u64 weights hash,
u64 codebook hash, u32 frame count. Then one packet per 4 frames, MSB first:
[11 pitch bits] and per frame [sq_flag vq_flag if the profile sends flags]
[Huffman codes: SQ, VQ stage 1, VQ stage 2]. The stream is byte-aligned only
at its end, with zero padding.
"""

import logging
import struct
from typing import Dict, List, Optional, Sequence, Tuple

from app.core.errors import BundleMismatchError, CorruptStreamError, FormatError, InputError
from app.db.bitio import BitReader, BitWriter
from app.schemas.bitstream import (
    BITSTREAM_MAGIC,
    BITSTREAM_VERSION,
    HEADER_BYTES,
    Bitstream,
    BitstreamHeader,
    CodedFrame,
    HuffmanTable,
)
from app.schemas.quantization import CodebookSet, QuantizerRole
from app.services.huffman_service import read_symbol, tables_for, write_symbol
from app.services.pitch_service import FRAMES_PER_PACKET, PITCH_BITS
from app.services.quantization_service import frame_roles

logger = logging.getLogger(__name__)

_HEADER = struct.Struct(">4sHBQQI")


def packet_count(frames: int) -> int:
    return -(-frames // FRAMES_PER_PACKET)


def encode_header(header: BitstreamHeader) -> bytes:
    return _HEADER.pack(
        BITSTREAM_MAGIC,
        header.version,
        header.profile_id,
        header.weights_hash,
        header.codebook_hash,
        header.frame_count,
    )


def decode_header(data: bytes) -> BitstreamHeader:
    if len(data) < HEADER_BYTES:
        raise CorruptStreamError(f"bitstream shorter than its {HEADER_BYTES}-byte header")
    magic, version, profile_id, weights_hash, codebook_hash, frames = _HEADER.unpack_from(data)
    if magic != BITSTREAM_MAGIC:
        raise FormatError(f"bad bitstream magic {magic!r}")
    if version != BITSTREAM_VERSION:
        raise FormatError(f"unsupported bitstream version {version}")
    return BitstreamHeader(
        version=version,
        profile_id=profile_id,
        weights_hash=weights_hash,
        codebook_hash=codebook_hash,
        frame_count=frames,
    )


def _check_frame(index: int, frame: CodedFrame, codebooks: CodebookSet) -> Tuple[Tuple[QuantizerRole, ...], ...]:
    if (index % FRAMES_PER_PACKET == 0) != (frame.pitch_code is not None):
        raise InputError(f"frame {index}: pitch code must be present exactly on the first frame of each packet")
    if codebooks.profile.always_large and not (frame.sq_flag and frame.vq_flag):
        raise InputError(f"frame {index}: profile {codebooks.profile.name.value} codes every component with Q_L")
    sq_roles, vq_roles = frame_roles(frame.sq_flag, frame.vq_flag, codebooks)
    if len(frame.sq_indices) != len(sq_roles) or len(frame.vq_indices) != len(vq_roles):
        raise InputError(f"frame {index}: codeword indices do not match its flags")
    return sq_roles, vq_roles


def pack(
    frames: Sequence[CodedFrame],
    codebooks: CodebookSet,
    weights_hash: int,
    codebook_hash: int,
    tables: Optional[Dict[QuantizerRole, HuffmanTable]] = None,
) -> Bitstream:
    tables = tables_for(codebooks) if tables is None else tables
    header = BitstreamHeader(
        profile_id=codebooks.profile.profile_id,
        weights_hash=weights_hash,
        codebook_hash=codebook_hash,
        frame_count=len(frames),
    )
    writer = BitWriter()
    send_flags = codebooks.profile.transmits_flags
    for i, frame in enumerate(frames):
        sq_roles, vq_roles = _check_frame(i, frame, codebooks)
        if frame.pitch_code is not None:
            writer.write(frame.pitch_code, PITCH_BITS)
        if send_flags:
            writer.write(frame.sq_flag, 1)
            writer.write(frame.vq_flag, 1)
        for role, index in zip(sq_roles + vq_roles, frame.sq_indices + frame.vq_indices):
            write_symbol(writer, tables[role], index)
    data = encode_header(header) + writer.getvalue()
    logger.debug("Packed %d frames into %d payload bits", len(frames), writer.bit_length)
    return Bitstream(header=header, frames=list(frames), data=data)


def unpack(
    data: bytes,
    codebooks: CodebookSet,
    tables: Optional[Dict[QuantizerRole, HuffmanTable]] = None,
) -> Bitstream:
    """Parse a bitstream produced with the same codebooks; the profile id must agree."""

    header = decode_header(data)
    if header.profile_id != codebooks.profile.profile_id:
        raise BundleMismatchError(
            f"bitstream profile id {header.profile_id} but codebooks are for "
            f"{codebooks.profile.name.value} ({codebooks.profile.profile_id})"
        )
    tables = tables_for(codebooks) if tables is None else tables
    reader = BitReader(data[HEADER_BYTES:])
    send_flags = codebooks.profile.transmits_flags
    frames: List[CodedFrame] = []
    for i in range(header.frame_count):
        pitch_code = reader.read(PITCH_BITS) if i % FRAMES_PER_PACKET == 0 else None
        sq_flag, vq_flag = (reader.read_bit(), reader.read_bit()) if send_flags else (1, 1)
        sq_roles, vq_roles = frame_roles(sq_flag, vq_flag, codebooks)
        sq_indices = tuple(read_symbol(reader, tables[role]) for role in sq_roles)
        vq_indices = tuple(read_symbol(reader, tables[role]) for role in vq_roles)
        frames.append(
            CodedFrame(
                sq_flag=sq_flag,
                vq_flag=vq_flag,
                sq_indices=sq_indices,
                vq_indices=vq_indices,
                pitch_code=pitch_code,
            )
        )
    if reader.remaining >= 8:
        raise CorruptStreamError(f"{reader.remaining} unexpected trailing bits after {header.frame_count} frames")
    if reader.remaining and reader.read(reader.remaining) != 0:
        raise CorruptStreamError("non-zero padding at the end of the bitstream")
    return Bitstream(header=header, frames=frames, data=bytes(data))
