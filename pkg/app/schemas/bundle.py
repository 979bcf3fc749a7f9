from pathlib import Path
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import BundleMismatchError, InputError
from app.schemas.predictor import PredictorWeights
from app.schemas.quantization import CodebookSet, ProfileName


class CodecBundle(BaseModel):
    """Predictor weights plus per-profile codebooks, with the hashes streams are checked against."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: PredictorWeights
    weights_hash: int = Field(..., ge=0, lt=1 << 64)
    codebooks: Dict[ProfileName, CodebookSet] = Field(default_factory=dict)
    codebook_hashes: Dict[ProfileName, int] = Field(default_factory=dict)
    path: Optional[Path] = None

    def for_profile(self, profile: ProfileName) -> CodebookSet:
        profile = ProfileName(getattr(profile, "value", profile))
        if profile not in self.codebooks:
            raise InputError(f"bundle has no codebooks for profile {profile.value}")
        return self.codebooks[profile]

    def profile_by_id(self, profile_id: int) -> ProfileName:
        for name, book in self.codebooks.items():
            if book.profile.profile_id == profile_id:
                return name
        raise BundleMismatchError(f"bundle has no codebooks for profile id {profile_id}")


class BundleManifest(BaseModel):
    """Contents of ``bundle.json``: artifact file names and their content hashes (hex)."""

    version: int = 1
    default_profile: ProfileName = ProfileName.mid
    seed: int = 0
    weights_file: str = "predictor.prdw"
    weights_hash: str
    codebook_files: Dict[ProfileName, str] = Field(default_factory=dict)
    codebook_hashes: Dict[ProfileName, str] = Field(default_factory=dict)
