"""Feature files: magic "PRFS", u32 version, u32 frame count, then 20 float32 per frame."""

from pathlib import Path

import numpy as np

from app.core.errors import FormatError
from app.db.binary import BinaryReader, BinaryWriter
from app.schemas.features import NB_CEPSTRUM, NB_FEATURES, FeatureStream

FEATURE_MAGIC = b"PRFS"
FEATURE_VERSION = 1


def features_to_bytes(stream: FeatureStream) -> bytes:
    writer = BinaryWriter()
    writer.raw(FEATURE_MAGIC)
    writer.pack("II", FEATURE_VERSION, len(stream))
    writer.array(stream.features(), "<f4")
    return writer.getvalue()


def features_from_bytes(data: bytes, name: str = "") -> FeatureStream:
    reader = BinaryReader(data, "feature")
    reader.magic(FEATURE_MAGIC)
    version, frames = reader.unpack("II")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    matrix = reader.array("<f4", frames * NB_FEATURES).astype(np.float64).reshape(frames, NB_FEATURES)
    reader.done()
    try:
        return FeatureStream(
            cepstrum=matrix[:, :NB_CEPSTRUM],
            pitch_period=matrix[:, NB_CEPSTRUM],
            pitch_correlation=matrix[:, NB_CEPSTRUM + 1],
            name=name,
        )
    except ValueError as exc:
        raise FormatError(f"feature file holds invalid frames: {exc}") from exc


class FeatureRepo:
    """Reads and writes feature streams on disk."""

    def save(self, stream: FeatureStream, path: Path) -> None:
        Path(path).write_bytes(features_to_bytes(stream))

    def load(self, path: Path) -> FeatureStream:
        path = Path(path)
        return features_from_bytes(path.read_bytes(), name=path.stem)
