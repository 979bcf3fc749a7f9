from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.schemas.quantization import ProfileName, QuantizerRole


class BitsPerFrame(BaseModel):
    entropy: float = Field(..., ge=0, description="-sum p log2 p")
    huffman_avg: float = Field(..., ge=0, description="sum p * code length")


class RateReport(BaseModel):
    profile: ProfileName
    bitrate: float = Field(..., description="Residual plus pitch bits/s, without flag cost")
    bitrate_with_flags: float = Field(..., description="bitrate plus 2 flag bits per frame when the profile sends flags")
    pitch_bitrate: float = 275.0
    flag_bitrate: float = 0.0
    ql_fraction_sq: float
    ql_fraction_vq: float
    bits: Dict[QuantizerRole, float] = Field(default_factory=dict)


class QuantizerReport(BaseModel):
    role: QuantizerRole
    codebook_bits: int
    entropy_bits: float
    huffman_bits: float
    published_bits: Optional[float] = None


class TrainReport(BaseModel):
    """Table-style summary printed by ``train``."""

    profile: ProfileName
    parameters: int
    final_loss: float
    epoch_losses: List[float] = Field(default_factory=list)
    theta_sq: float
    theta_vq: float
    ql_fraction_sq: float
    ql_fraction_vq: float
    quantizers: List[QuantizerReport] = Field(default_factory=list)
    rate: RateReport
    algorithmic_delay_ms: float = 15.0


class DistortionStats(BaseModel):
    mean: float
    p95: float
    max: float


class EvalReport(BaseModel):
    profile: ProfileName
    utterances: int
    frames: int
    measured_bitrate: float
    predicted_bitrate: float
    predicted_bitrate_with_flags: float
    distortion: DistortionStats = Field(..., description="Per-frame MSE in scaled units")
    ql_fraction_sq: float
    ql_fraction_vq: float
    residual_variance: float
    feature_variance: float
    variance_ratio: float = Field(..., description="residual variance / feature variance, scaled units")
    longest_discarded_run: int = 0
    discarded_run_mse: float = 0.0


class ProfileSummary(BaseModel):
    """Static profile table entry served by the API."""

    name: ProfileName
    profile_id: int
    ql_fraction_sq: float
    ql_fraction_vq: float
    transmits_flags: bool
    codebook_bits: Dict[QuantizerRole, int] = Field(default_factory=dict)
    published_bits: Dict[QuantizerRole, float] = Field(default_factory=dict)
