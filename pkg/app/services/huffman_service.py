"""Canonical Huffman coding of codeword indices."""

from collections import deque
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.core.errors import CorruptStreamError, InputError
from app.db.bitio import BitReader, BitWriter
from app.schemas.bitstream import HuffmanTable
from app.schemas.quantization import CodebookSet, QuantizerRole


def code_lengths(weights: Sequence[float]) -> List[int]:
    """Huffman code lengths by the two-queue method.

    Leaves are sorted by (weight, symbol); on equal weight a leaf is merged
    before an internal node, which keeps the construction deterministic.
    """

    weights = [float(w) for w in weights]
    if not weights:
        raise InputError("cannot build a Huffman code for zero symbols")
    if any(w < 0 or not np.isfinite(w) for w in weights):
        raise InputError("symbol weights must be finite and non-negative")
    if len(weights) == 1:
        return [0]

    leaves = deque(sorted((w, s) for s, w in enumerate(weights)))
    nodes: deque = deque()
    lengths = [0] * len(weights)

    def smallest():
        if nodes and (not leaves or nodes[0][0] < leaves[0][0]):
            return nodes.popleft()
        weight, symbol = leaves.popleft()
        return weight, [symbol]

    while len(leaves) + len(nodes) > 1:
        w1, m1 = smallest()
        w2, m2 = smallest()
        members = m1 + m2
        for symbol in members:
            lengths[symbol] += 1
        nodes.append((w1 + w2, members))
    return lengths


def build_huffman(frequencies: Sequence[float]) -> HuffmanTable:
    return HuffmanTable(lengths=code_lengths(frequencies))


def write_symbol(writer: BitWriter, table: HuffmanTable, symbol: int) -> None:
    if not 0 <= symbol < table.size:
        raise InputError(f"symbol {symbol} outside a {table.size}-symbol table")
    code, length = table.code(symbol)
    writer.write(code, length)


def read_symbol(reader: BitReader, table: HuffmanTable) -> int:
    code = 0
    for length in range(1, table.max_length + 1):
        code = (code << 1) | reader.read_bit()
        symbol = table.lookup(code, length)
        if symbol is not None:
            return symbol
    if table.max_length == 0:
        return 0
    raise CorruptStreamError("bit pattern matches no Huffman code")


def huffman_encode(indices: Iterable[int], table: HuffmanTable) -> bytes:
    writer = BitWriter()
    for symbol in indices:
        write_symbol(writer, table, int(symbol))
    return writer.getvalue()


def huffman_decode(data: bytes, table: HuffmanTable, count: int) -> List[int]:
    reader = BitReader(data)
    return [read_symbol(reader, table) for _ in range(count)]


def average_length(frequencies: Sequence[float], table: HuffmanTable) -> float:
    p = np.asarray(frequencies, dtype=np.float64)
    return float(np.dot(p / p.sum(), np.asarray(table.lengths, dtype=np.float64)))


def tables_for(codebooks: CodebookSet, counts: Optional[Dict[QuantizerRole, np.ndarray]] = None) -> Dict[QuantizerRole, HuffmanTable]:
    """One table per quantizer; roles without counts get a fixed-length code."""

    counts = codebooks.counts if counts is None else counts
    tables = {}
    for role, book in codebooks.codebooks.items():
        weights = counts.get(role)
        tables[role] = build_huffman(weights if weights is not None else np.ones(book.size))
    return tables
