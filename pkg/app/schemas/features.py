from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SAMPLE_RATE = 16000
WINDOW_SIZE = 320
HOP_SIZE = 160
FRAME_RATE = SAMPLE_RATE // HOP_SIZE
NB_CEPSTRUM = 18
NB_PITCH = 2
NB_FEATURES = NB_CEPSTRUM + NB_PITCH
PITCH_MIN = 32
PITCH_MAX = 256


class PcmSignal(BaseModel):
    """16 kHz mono PCM as signed 16-bit amplitudes."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @field_validator("samples", mode="before")
    @classmethod
    def as_int16(cls, value):
        arr = np.asarray(value)
        if arr.ndim != 1:
            raise ValueError("PCM must be mono (1-D)")
        if arr.dtype != np.int16:
            arr = np.clip(np.round(arr.astype(np.float64)), -32768, 32767).astype(np.int16)
        return arr

    @field_validator("sample_rate")
    @classmethod
    def only_16k(cls, value: int) -> int:
        if value != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE} Hz, got {value}")
        return value

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    def as_float(self) -> np.ndarray:
        """Samples normalized to [-1, 1)."""

        return self.samples.astype(np.float64) / 32768.0


class FeatureFrame(BaseModel):
    """One 10 ms hop: 18 Bark cepstra plus pitch period and correlation."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cepstrum: np.ndarray
    pitch_period: int = Field(..., ge=PITCH_MIN, le=PITCH_MAX)
    pitch_correlation: float = Field(..., ge=0.0, le=1.0)

    @field_validator("cepstrum", mode="before")
    @classmethod
    def eighteen_coefficients(cls, value):
        arr = np.asarray(value, dtype=np.float64).reshape(-1)
        if arr.shape[0] != NB_CEPSTRUM:
            raise ValueError(f"cepstrum must have {NB_CEPSTRUM} entries, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cepstrum must be finite")
        return arr

    def features(self) -> np.ndarray:
        """The 20-dim raw feature vector (cepstrum, period, correlation)."""

        return np.concatenate([self.cepstrum, [float(self.pitch_period), self.pitch_correlation]])


class FeatureStream(BaseModel):
    """Frames at 100 frames/s stored column-wise for vectorized processing."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cepstrum: np.ndarray = Field(default_factory=lambda: np.zeros((0, NB_CEPSTRUM)))
    pitch_period: np.ndarray = Field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pitch_correlation: np.ndarray = Field(default_factory=lambda: np.zeros(0))
    name: str = ""

    @field_validator("cepstrum", mode="before")
    @classmethod
    def cepstrum_matrix(cls, value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.size == 0:
            return np.zeros((0, NB_CEPSTRUM))
        if arr.ndim != 2 or arr.shape[1] != NB_CEPSTRUM:
            raise ValueError(f"cepstrum must be (frames, {NB_CEPSTRUM})")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cepstrum must be finite")
        return arr

    @field_validator("pitch_period", mode="before")
    @classmethod
    def period_range(cls, value):
        arr = np.asarray(value).reshape(-1)
        arr = np.rint(arr).astype(np.int64)
        if arr.size and (arr.min() < PITCH_MIN or arr.max() > PITCH_MAX):
            raise ValueError(f"pitch_period must lie in [{PITCH_MIN}, {PITCH_MAX}]")
        return arr

    @field_validator("pitch_correlation", mode="before")
    @classmethod
    def correlation_range(cls, value):
        arr = np.asarray(value, dtype=np.float64).reshape(-1)
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("pitch_correlation must lie in [0, 1]")
        return arr

    @model_validator(mode="after")
    def aligned(self):
        n = self.cepstrum.shape[0]
        if self.pitch_period.shape[0] != n or self.pitch_correlation.shape[0] != n:
            raise ValueError("cepstrum and pitch columns must have the same frame count")
        return self

    def __len__(self) -> int:
        return int(self.cepstrum.shape[0])

    def frame(self, index: int) -> FeatureFrame:
        return FeatureFrame(
            cepstrum=self.cepstrum[index],
            pitch_period=int(self.pitch_period[index]),
            pitch_correlation=float(self.pitch_correlation[index]),
        )

    def frames(self) -> List[FeatureFrame]:
        return [self.frame(i) for i in range(len(self))]

    def features(self) -> np.ndarray:
        """(frames, 20) raw feature matrix."""

        return np.column_stack([self.cepstrum, self.pitch_period.astype(np.float64), self.pitch_correlation])

    def slice(self, start: int, stop: int) -> "FeatureStream":
        return FeatureStream(
            cepstrum=self.cepstrum[start:stop],
            pitch_period=self.pitch_period[start:stop],
            pitch_correlation=self.pitch_correlation[start:stop],
            name=self.name,
        )

    @classmethod
    def from_frames(cls, frames: List[FeatureFrame], name: str = "") -> "FeatureStream":
        if not frames:
            return cls(name=name)
        return cls(
            cepstrum=np.stack([f.cepstrum for f in frames]),
            pitch_period=[f.pitch_period for f in frames],
            pitch_correlation=[f.pitch_correlation for f in frames],
            name=name,
        )
