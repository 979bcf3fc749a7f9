"""Byte-in, byte-out codec endpoints backed by the bundle in ``Settings.bundle_dir``."""

import logging

from fastapi import APIRouter, Body, Depends, Response

from app.core.config import get_settings
from app.db.bundle_repo import BundleRepo
from app.db.feature_repo import features_from_bytes, features_to_bytes
from app.schemas.quantization import ProfileName
from app.services.bitstream_service import decode_header
from app.services.residual_service import decode_stream, encode_stream

logger = logging.getLogger(__name__)

router = APIRouter()

OCTET_STREAM = "application/octet-stream"


def get_bundle_repo() -> BundleRepo:
    return BundleRepo(get_settings().bundle_dir)


@router.post("/codec/{profile}/encode", response_class=Response)
def encode_endpoint(
    profile: ProfileName,
    body: bytes = Body(..., media_type=OCTET_STREAM),
    repo: BundleRepo = Depends(get_bundle_repo),
) -> Response:
    stream = features_from_bytes(body, name="request")
    bundle = repo.load([profile])
    encoded = encode_stream(
        stream,
        bundle.for_profile(profile),
        bundle.weights,
        bundle.weights_hash,
        bundle.codebook_hashes[profile],
    )
    logger.info("Encoded %d frames with profile %s", len(stream), profile.value)
    return Response(content=encoded.bitstream.data, media_type=OCTET_STREAM)


@router.post("/codec/decode", response_class=Response)
def decode_endpoint(
    body: bytes = Body(..., media_type=OCTET_STREAM),
    repo: BundleRepo = Depends(get_bundle_repo),
) -> Response:
    header = decode_header(body)
    bundle = repo.load()
    profile = bundle.profile_by_id(header.profile_id)
    decoded = decode_stream(
        body,
        bundle.for_profile(profile),
        bundle.weights,
        bundle.weights_hash,
        bundle.codebook_hashes[profile],
    )
    return Response(content=features_to_bytes(decoded.features), media_type=OCTET_STREAM)
