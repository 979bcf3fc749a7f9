"""Codebook files.

Layout (little-endian): magic "PRCB", u32 version, profile name, float64
theta_sq and theta_vq, float64 measured Q_L fractions (sq, vq), u32 quantizer
count; per quantizer: role tag, u32 dim, u32 K, K*dim float32 centroids, u8
has-counts, K u32 symbol counts when present.
"""

from typing import Dict

import numpy as np

from app.core.errors import FormatError, InputError
from app.db.binary import BinaryReader, BinaryWriter
from app.schemas.quantization import Codebook, CodebookSet, QuantizerRole
from app.services.quantization_service import get_profile

CODEBOOK_MAGIC = b"PRCB"
CODEBOOK_VERSION = 1


def codebooks_to_bytes(codebooks: CodebookSet) -> bytes:
    profile = codebooks.profile
    writer = BinaryWriter()
    writer.raw(CODEBOOK_MAGIC)
    writer.pack("I", CODEBOOK_VERSION)
    writer.text(profile.name.value)
    writer.pack("dddd", profile.theta_sq, profile.theta_vq, codebooks.measured_ql_fraction_sq, codebooks.measured_ql_fraction_vq)
    writer.pack("I", len(codebooks.codebooks))
    for role in profile.role_bits():
        book = codebooks.codebooks[role]
        writer.text(role.value)
        writer.pack("II", book.dim, book.size)
        writer.array(book.centroids, "<f4")
        counts = codebooks.counts.get(role)
        writer.pack("B", counts is not None)
        if counts is not None:
            writer.array(counts, "<u4")
    return writer.getvalue()


def _layout_update(books: Dict[QuantizerRole, Codebook]) -> dict:
    update = {}
    bits = {role: book.bits for role, book in books.items()}
    if QuantizerRole.SQ_L in bits:
        update["sq_large_bits"] = bits[QuantizerRole.SQ_L]
    if QuantizerRole.VQ_L1 in bits:
        update["vq_large_bits"] = [bits[r] for r in (QuantizerRole.VQ_L1, QuantizerRole.VQ_L2) if r in bits]
    if QuantizerRole.SQ_S in bits:
        update["sq_small_bits"] = bits[QuantizerRole.SQ_S]
    if QuantizerRole.VQ_S in bits:
        update["vq_small_bits"] = [bits[QuantizerRole.VQ_S]]
    return update


def codebooks_from_bytes(data: bytes) -> CodebookSet:
    reader = BinaryReader(data, "codebook")
    reader.magic(CODEBOOK_MAGIC)
    version = reader.unpack("I")
    if version != CODEBOOK_VERSION:
        raise FormatError(f"unsupported codebook file version {version}")
    name = reader.text()
    theta_sq, theta_vq, measured_sq, measured_vq = reader.unpack("dddd")
    count = reader.unpack("I")
    books: Dict[QuantizerRole, Codebook] = {}
    counts: Dict[QuantizerRole, np.ndarray] = {}
    try:
        for _ in range(count):
            role = QuantizerRole(reader.text())
            dim, size = reader.unpack("II")
            centroids = reader.array("<f4", dim * size).astype(np.float64).reshape(size, dim)
            books[role] = Codebook(role=role, centroids=centroids)
            if reader.unpack("B"):
                counts[role] = reader.array("<u4", size).astype(np.int64)
        reader.done()
        base = get_profile(name)
        profile = base.model_copy(update=_layout_update(books)).with_thresholds(theta_sq, theta_vq)
        return CodebookSet(
            profile=profile,
            codebooks=books,
            counts=counts,
            measured_ql_fraction_sq=measured_sq,
            measured_ql_fraction_vq=measured_vq,
        )
    except (ValueError, InputError) as exc:
        raise FormatError(f"codebook file is inconsistent: {exc}") from exc
