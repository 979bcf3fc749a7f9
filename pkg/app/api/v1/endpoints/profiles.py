from typing import List

from fastapi import APIRouter

from app.schemas.quantization import BitrateProfile, ProfileName
from app.schemas.reports import ProfileSummary, RateReport
from app.services.entropy_service import rate_report
from app.services.quantization_service import PROFILE_TABLE

router = APIRouter()


def _summary(profile: BitrateProfile) -> ProfileSummary:
    return ProfileSummary(
        name=profile.name,
        profile_id=profile.profile_id,
        ql_fraction_sq=profile.ql_fraction_sq,
        ql_fraction_vq=profile.ql_fraction_vq,
        transmits_flags=profile.transmits_flags,
        codebook_bits=profile.role_bits(),
        published_bits=profile.published_bits,
    )


@router.get("/profiles", response_model=List[ProfileSummary])
def list_profiles_endpoint() -> List[ProfileSummary]:
    return [_summary(PROFILE_TABLE[name]) for name in ProfileName]


@router.get("/profiles/{name}/rate", response_model=RateReport)
def profile_rate_endpoint(name: ProfileName) -> RateReport:
    return rate_report(PROFILE_TABLE[name])
