from dataclasses import dataclass, field
from typing import Dict, Literal

import numpy as np
from pydantic import BaseModel, Field

from app.schemas.features import NB_CEPSTRUM, NB_FEATURES


class TrainConfig(BaseModel):
    """Predictor and codebook training knobs; the seed fixes all randomness."""

    learning_rate: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    clip_norm: float = Field(default=1.0, gt=0)
    optimizer: Literal["sgd", "adam"] = "sgd"
    epochs: int = Field(default=30, ge=0)
    truncation_length: int = Field(default=64, gt=0, description="BPTT window in frames")
    noise_std: float = Field(default=0.02, ge=0, description="Gaussian input noise, scaled units, cepstra only")
    batch_size: int = Field(default=16, gt=0)
    seed: int = Field(default=1234, ge=0)
    gru1_units: int = Field(default=384, gt=0)
    gru2_units: int = Field(default=128, gt=0)
    kmeans_max_iters: int = Field(default=25, gt=0)
    calibration_rounds: int = Field(default=0, ge=0, description="Closed-loop threshold refinement passes")
    segment_seconds: float = Field(default=2.0, gt=0)
    max_segments_per_utterance: int = Field(default=8, gt=0)
    progress: bool = False


@dataclass
class FeatureScaler:
    """Per-dimension affine map ``gain * (x + offset)`` onto [-1, 1] for the 20 features."""

    offset: np.ndarray
    gain: np.ndarray

    def __post_init__(self) -> None:
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        self.gain = np.asarray(self.gain, dtype=np.float64).reshape(-1)
        if self.offset.shape != (NB_FEATURES,) or self.gain.shape != (NB_FEATURES,):
            raise ValueError(f"scaler needs {NB_FEATURES} offsets and gains")
        if not (np.all(np.isfinite(self.offset)) and np.all(np.isfinite(self.gain))):
            raise ValueError("scaler entries must be finite")
        if np.any(self.gain <= 0):
            raise ValueError("scaler gains must be strictly positive")


@dataclass
class GruLayer:
    """Gate rows are ordered reset, update, candidate."""

    w_input: np.ndarray
    w_recurrent: np.ndarray
    bias: np.ndarray

    @property
    def units(self) -> int:
        return int(self.w_recurrent.shape[1])

    @property
    def inputs(self) -> int:
        return int(self.w_input.shape[1])

    def check(self, name: str) -> None:
        h = self.units
        if self.w_recurrent.shape != (3 * h, h):
            raise ValueError(f"{name}.w_recurrent must be ({3 * h}, {h})")
        if self.w_input.shape[0] != 3 * h or self.bias.shape != (3 * h,):
            raise ValueError(f"{name} gate dimensions disagree")


@dataclass
class PredictorWeights:
    gru1: GruLayer
    gru2: GruLayer
    out_weight: np.ndarray
    out_bias: np.ndarray
    scaler: FeatureScaler

    def __post_init__(self) -> None:
        self.gru1.check("gru1")
        self.gru2.check("gru2")
        if self.gru1.inputs != NB_FEATURES:
            raise ValueError(f"gru1 takes {NB_FEATURES} inputs, got {self.gru1.inputs}")
        if self.gru2.inputs != self.gru1.units:
            raise ValueError("gru2 input width must equal gru1 units")
        if self.out_weight.shape != (NB_CEPSTRUM, self.gru2.units) or self.out_bias.shape != (NB_CEPSTRUM,):
            raise ValueError("output layer must map gru2 units to 18 cepstra")
        for name, tensor in self.tensors().items():
            if not np.all(np.isfinite(tensor)):
                raise ValueError(f"{name} has non-finite entries")

    def tensors(self) -> Dict[str, np.ndarray]:
        """Named parameter blocks in file order."""

        return {
            "gru1.w_input": self.gru1.w_input,
            "gru1.w_recurrent": self.gru1.w_recurrent,
            "gru1.bias": self.gru1.bias,
            "gru2.w_input": self.gru2.w_input,
            "gru2.w_recurrent": self.gru2.w_recurrent,
            "gru2.bias": self.gru2.bias,
            "out.weight": self.out_weight,
            "out.bias": self.out_bias,
        }

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], scaler: FeatureScaler) -> "PredictorWeights":
        return cls(
            gru1=GruLayer(tensors["gru1.w_input"], tensors["gru1.w_recurrent"], tensors["gru1.bias"]),
            gru2=GruLayer(tensors["gru2.w_input"], tensors["gru2.w_recurrent"], tensors["gru2.bias"]),
            out_weight=tensors["out.weight"],
            out_bias=tensors["out.bias"],
            scaler=scaler,
        )

    def copy(self) -> "PredictorWeights":
        return PredictorWeights.from_tensors(
            {k: v.copy() for k, v in self.tensors().items()},
            FeatureScaler(self.scaler.offset.copy(), self.scaler.gain.copy()),
        )


@dataclass
class PredictorState:
    """Recurrent state h_n of both GRU layers; rows are independent streams."""

    h1: np.ndarray
    h2: np.ndarray

    @classmethod
    def zeros(cls, weights: PredictorWeights, batch: int = 1) -> "PredictorState":
        return cls(np.zeros((batch, weights.gru1.units)), np.zeros((batch, weights.gru2.units)))


@dataclass
class TrainResult:
    weights: PredictorWeights
    epoch_losses: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")
