import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.features import NB_CEPSTRUM

VECTOR_DIM = NB_CEPSTRUM - 1


class QuantizerRole(str, Enum):
    SQ_L = "SQ_L"
    SQ_S = "SQ_S"
    VQ_L1 = "VQ_L1"
    VQ_L2 = "VQ_L2"
    VQ_S = "VQ_S"

    @property
    def dim(self) -> int:
        return 1 if self.value.startswith("SQ") else VECTOR_DIM


# Huffman codes follow this order inside every frame.
ROLE_ORDER = (QuantizerRole.SQ_L, QuantizerRole.SQ_S, QuantizerRole.VQ_L1, QuantizerRole.VQ_L2, QuantizerRole.VQ_S)


class ProfileName(str, Enum):
    low = "low"
    mid = "mid"
    high = "high"


class Codebook(BaseModel):
    """k-means centroid table for one quantizer stage, in scaled units."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    role: QuantizerRole
    centroids: np.ndarray

    @field_validator("centroids", mode="before")
    @classmethod
    def as_matrix(cls, value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError("centroids must be a (K, dim) matrix")
        if not np.all(np.isfinite(arr)):
            raise ValueError("centroids must be finite")
        size = arr.shape[0]
        if size < 1 or size & (size - 1):
            raise ValueError(f"codebook size must be a power of two, got {size}")
        return arr

    @model_validator(mode="after")
    def dim_matches_role(self):
        if self.centroids.shape[1] != self.role.dim:
            raise ValueError(f"{self.role.value} needs dim {self.role.dim}, got {self.centroids.shape[1]}")
        return self

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    @property
    def bits(self) -> int:
        return int(math.log2(self.size))


class BitrateProfile(BaseModel):
    """Thresholds, Q_L fractions and codebook layout of one target bitrate.

    ``sq_small_bits`` / ``vq_small_bits`` set to None means DISCARD: below-threshold
    components are not coded and dequantize to zero.
    """

    name: ProfileName
    profile_id: int = Field(..., ge=0, le=255)
    ql_fraction_sq: float = Field(..., gt=0, le=1)
    ql_fraction_vq: float = Field(..., gt=0, le=1)
    theta_sq: float = -math.inf
    theta_vq: float = -math.inf
    sq_large_bits: int = 8
    sq_small_bits: Optional[int] = None
    vq_large_bits: List[int] = Field(default_factory=lambda: [10, 10])
    vq_small_bits: Optional[List[int]] = None
    published_bits: Dict[QuantizerRole, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def consistent(self):
        if not 1 <= len(self.vq_large_bits) <= 2:
            raise ValueError("Q_L vector quantization has one or two stages")
        if self.vq_small_bits is not None and len(self.vq_small_bits) != 1:
            raise ValueError("Q_S vector quantization is single-stage")
        if self.always_large and (self.theta_sq != -math.inf or self.theta_vq != -math.inf):
            raise ValueError("a profile coding every frame with Q_L has no thresholds")
        return self

    @property
    def always_large(self) -> bool:
        return self.ql_fraction_sq >= 1.0 and self.ql_fraction_vq >= 1.0

    @property
    def transmits_flags(self) -> bool:
        return not self.always_large

    def role_bits(self) -> Dict[QuantizerRole, int]:
        """Codebook bit widths for every quantizer the profile uses."""

        bits = {QuantizerRole.SQ_L: self.sq_large_bits, QuantizerRole.VQ_L1: self.vq_large_bits[0]}
        if len(self.vq_large_bits) == 2:
            bits[QuantizerRole.VQ_L2] = self.vq_large_bits[1]
        if not self.always_large:
            if self.sq_small_bits is not None:
                bits[QuantizerRole.SQ_S] = self.sq_small_bits
            if self.vq_small_bits is not None:
                bits[QuantizerRole.VQ_S] = self.vq_small_bits[0]
        return {role: bits[role] for role in ROLE_ORDER if role in bits}

    def with_thresholds(self, theta_sq: float, theta_vq: float) -> "BitrateProfile":
        return self.model_copy(update={"theta_sq": float(theta_sq), "theta_vq": float(theta_vq)})


class CodebookSet(BaseModel):
    """Everything a codec side needs besides the predictor: profile, codebooks and symbol counts."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    profile: BitrateProfile
    codebooks: Dict[QuantizerRole, Codebook]
    counts: Dict[QuantizerRole, np.ndarray] = Field(default_factory=dict)
    measured_ql_fraction_sq: float = Field(default=1.0, ge=0, le=1)
    measured_ql_fraction_vq: float = Field(default=1.0, ge=0, le=1)

    @model_validator(mode="after")
    def layout_matches_profile(self):
        expected = self.profile.role_bits()
        if set(self.codebooks) != set(expected):
            raise ValueError(
                f"profile {self.profile.name.value} needs codebooks {sorted(r.value for r in expected)}, "
                f"got {sorted(r.value for r in self.codebooks)}"
            )
        for role, bits in expected.items():
            if self.codebooks[role].role != role or self.codebooks[role].size != 1 << bits:
                raise ValueError(f"{role.value} codebook must have {1 << bits} entries")
        for role, count in self.counts.items():
            if role not in self.codebooks or np.asarray(count).shape != (self.codebooks[role].size,):
                raise ValueError(f"symbol counts for {role.value} do not match its codebook")
        return self


@dataclass
class ResidualSplit:
    """r_0 and r_{1:17} of an 18-dim residual."""

    r0: float
    r_vec: np.ndarray

    @classmethod
    def of(cls, residual: np.ndarray) -> "ResidualSplit":
        residual = np.asarray(residual, dtype=np.float64)
        return cls(float(residual[0]), residual[1:].copy())

    def join(self) -> np.ndarray:
        return np.concatenate([[self.r0], self.r_vec])


@dataclass
class ResidualSets:
    """Codebook training material split by quantizer scheme."""

    sq_large: np.ndarray
    sq_small: np.ndarray
    vq_large: np.ndarray
    vq_small: np.ndarray
