import inspect

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.api.v1.endpoints.codec import decode_endpoint, encode_endpoint
from app.core.config import get_settings
from app.db.feature_repo import features_from_bytes, features_to_bytes
from app.main import app

OCTET = {"Content-Type": "application/octet-stream"}


@pytest.fixture
def client(monkeypatch, bundle_dir):
    monkeypatch.setenv("PREDCODEC_BUNDLE_DIR", str(bundle_dir))
    get_settings.cache_clear()  # type: ignore[attr-defined]
    return TestClient(app)


def test_list_profiles(client) -> None:
    response = client.get("/api/v1/profiles")
    assert response.status_code == 200
    body = response.json()
    assert [p["name"] for p in body] == ["low", "mid", "high"]
    assert body[0]["transmits_flags"] is True
    assert body[2]["transmits_flags"] is False
    assert body[1]["codebook_bits"] == {"SQ_L": 8, "VQ_L1": 10, "VQ_L2": 10, "SQ_S": 4, "VQ_S": 9}


def test_profile_rate(client) -> None:
    response = client.get("/api/v1/profiles/low/rate")
    assert response.status_code == 200
    assert response.json()["bitrate"] == 942.5
    assert response.json()["bitrate_with_flags"] == 1142.5
    assert client.get("/api/v1/profiles/ultra/rate").status_code == 422


def test_encode_then_decode(client, corpus) -> None:
    stream = corpus[0]
    encoded = client.post("/api/v1/codec/mid/encode", content=features_to_bytes(stream), headers=OCTET)
    assert encoded.status_code == 200
    assert encoded.headers["content-type"] == "application/octet-stream"
    decoded = client.post("/api/v1/codec/decode", content=encoded.content, headers=OCTET)
    assert decoded.status_code == 200
    features = features_from_bytes(decoded.content)
    assert len(features) == len(stream)
    assert np.all(np.isfinite(features.cepstrum))


def test_unknown_profile_is_rejected(client, corpus) -> None:
    response = client.post("/api/v1/codec/ultra/encode", content=features_to_bytes(corpus[0]), headers=OCTET)
    assert response.status_code == 422


def test_missing_bundle_is_a_client_error(monkeypatch, tmp_path, corpus) -> None:
    monkeypatch.setenv("PREDCODEC_BUNDLE_DIR", str(tmp_path / "nowhere"))
    get_settings.cache_clear()  # type: ignore[attr-defined]
    response = TestClient(app).post("/api/v1/codec/low/encode", content=features_to_bytes(corpus[0]), headers=OCTET)
    assert response.status_code == 400
    assert "not a codec bundle" in response.json()["detail"]


def test_corrupt_bodies(client) -> None:
    assert client.post("/api/v1/codec/decode", content=b"PRBS", headers=OCTET).status_code == 422
    assert client.post("/api/v1/codec/low/encode", content=b"nope", headers=OCTET).status_code == 422


def test_empty_body_is_rejected(client) -> None:
    assert client.post("/api/v1/codec/decode", content=b"", headers=OCTET).status_code == 422


def test_codec_endpoints_run_in_the_threadpool() -> None:
    assert not inspect.iscoroutinefunction(encode_endpoint)
    assert not inspect.iscoroutinefunction(decode_endpoint)
