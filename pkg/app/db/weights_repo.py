"""Predictor weight files.

Layout (little-endian): magic "PRDW", u32 version, u32 tensor count; per tensor
u32 name length, name, u32 rank, u32 dims, row-major float32 data; then the
scaler as 20 float64 offsets and 20 float64 gains.
"""

from pathlib import Path
from typing import Dict, List

import numpy as np

from app.core.errors import FormatError
from app.db.binary import BinaryReader, BinaryWriter
from app.schemas.features import NB_FEATURES
from app.schemas.predictor import FeatureScaler, PredictorWeights

WEIGHTS_MAGIC = b"PRDW"
WEIGHTS_VERSION = 1
_MAX_RANK = 4


def weights_to_bytes(weights: PredictorWeights) -> bytes:
    writer = BinaryWriter()
    writer.raw(WEIGHTS_MAGIC)
    tensors = weights.tensors()
    writer.pack("II", WEIGHTS_VERSION, len(tensors))
    for name, tensor in tensors.items():
        writer.text(name)
        writer.pack("I", tensor.ndim)
        writer.pack(f"{tensor.ndim}I", *tensor.shape)
        writer.array(tensor, "<f4")
    writer.array(weights.scaler.offset, "<f8")
    writer.array(weights.scaler.gain, "<f8")
    return writer.getvalue()


def _read_tensors(reader: BinaryReader) -> Dict[str, np.ndarray]:
    version, count = reader.unpack("II")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.text()
        rank = reader.unpack("I")
        if not 1 <= rank <= _MAX_RANK:
            raise FormatError(f"tensor {name!r} has unsupported rank {rank}")
        dims = reader.unpack(f"{rank}I")
        dims = (dims,) if rank == 1 else tuple(dims)
        size = int(np.prod(dims))
        tensors[name] = reader.array("<f4", size).astype(np.float64).reshape(dims)
    return tensors


def weights_from_bytes(data: bytes) -> PredictorWeights:
    reader = BinaryReader(data, "weight")
    reader.magic(WEIGHTS_MAGIC)
    tensors = _read_tensors(reader)
    offset = reader.array("<f8", NB_FEATURES)
    gain = reader.array("<f8", NB_FEATURES)
    reader.done()
    try:
        return PredictorWeights.from_tensors(tensors, FeatureScaler(offset=offset, gain=gain))
    except KeyError as exc:
        raise FormatError(f"weight file lacks tensor {exc.args[0]}") from exc
    except ValueError as exc:
        raise FormatError(f"weight file is inconsistent: {exc}") from exc


def save_weights(weights: PredictorWeights, path: Path) -> bytes:
    data = weights_to_bytes(weights)
    Path(path).write_bytes(data)
    return data


def load_weights(path: Path) -> PredictorWeights:
    return weights_from_bytes(Path(path).read_bytes())


def dump_header(path: Path) -> List[str]:
    """Human-readable listing of tensor names and shapes."""

    data = Path(path).read_bytes()
    reader = BinaryReader(data, "weight")
    reader.magic(WEIGHTS_MAGIC)
    tensors = _read_tensors(reader)
    lines = [f"{Path(path).name}: version {WEIGHTS_VERSION}, {len(tensors)} tensors, {len(data)} bytes"]
    total = 0
    for name, tensor in tensors.items():
        total += tensor.size
        lines.append(f"  {name:<18} {'x'.join(str(d) for d in tensor.shape):>10}  {tensor.size}")
    lines.append(f"  parameters {total}; scaler {NB_FEATURES} offsets + {NB_FEATURES} gains (float64)")
    return lines
