import json

import numpy as np
import pytest

from app.core.errors import BundleMismatchError, FormatError, InputError
from app.db.binary import content_hash
from app.db.bundle_repo import MANIFEST_NAME, WEIGHTS_NAME, BundleRepo, codebook_file_name
from app.db.codebook_repo import codebooks_from_bytes, codebooks_to_bytes
from app.db.feature_repo import FeatureRepo, features_from_bytes, features_to_bytes
from app.schemas.quantization import ProfileName, QuantizerRole
from app.services.quantization_service import get_profile


def test_features_roundtrip_through_file(tmp_path, corpus) -> None:
    stream = corpus[0]
    path = tmp_path / "utt.prfs"
    FeatureRepo().save(stream, path)
    loaded = FeatureRepo().load(path)
    assert loaded.name == "utt"
    assert len(loaded) == len(stream)
    np.testing.assert_array_equal(loaded.cepstrum, stream.cepstrum.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(loaded.pitch_period, stream.pitch_period)


def test_feature_file_errors(corpus) -> None:
    data = features_to_bytes(corpus[1])
    with pytest.raises(FormatError):
        features_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        features_from_bytes(data[:-3])
    with pytest.raises(FormatError):
        features_from_bytes(data + b"\x00" * 4)


def test_codebooks_roundtrip(make_codebooks) -> None:
    books = make_codebooks(get_profile("mid"), seed=3, counts={QuantizerRole.SQ_S: np.arange(1, 17)})
    loaded = codebooks_from_bytes(codebooks_to_bytes(books))
    assert loaded.profile.name == ProfileName.mid
    assert loaded.profile.theta_sq == books.profile.theta_sq
    assert loaded.profile.theta_vq == books.profile.theta_vq
    for role, book in books.codebooks.items():
        np.testing.assert_array_equal(loaded.codebooks[role].centroids, book.centroids)
    assert list(loaded.counts) == [QuantizerRole.SQ_S]
    np.testing.assert_array_equal(loaded.counts[QuantizerRole.SQ_S], np.arange(1, 17))


def test_codebook_bits_follow_stored_sizes(make_codebooks) -> None:
    low = get_profile("low").model_copy(update={"sq_large_bits": 3, "vq_large_bits": [4, 2]})
    loaded = codebooks_from_bytes(codebooks_to_bytes(make_codebooks(low, seed=1)))
    assert loaded.profile.role_bits() == {QuantizerRole.SQ_L: 3, QuantizerRole.VQ_L1: 4, QuantizerRole.VQ_L2: 2}


def test_codebook_file_errors(make_codebooks) -> None:
    data = codebooks_to_bytes(make_codebooks(get_profile("high")))
    with pytest.raises(FormatError):
        codebooks_from_bytes(b"PRDW" + data[4:])
    with pytest.raises(FormatError):
        codebooks_from_bytes(data[:100])


def test_bundle_roundtrip(bundle_dir, weights, codebook_sets) -> None:
    repo = BundleRepo(bundle_dir)
    bundle = repo.load()
    manifest = repo.read_manifest()
    assert manifest.default_profile == ProfileName.low
    assert set(bundle.codebooks) == set(ProfileName)
    assert bundle.weights_hash == content_hash((bundle_dir / WEIGHTS_NAME).read_bytes())
    for name, tensor in weights.tensors().items():
        np.testing.assert_array_equal(bundle.weights.tensors()[name], tensor)
    assert bundle.for_profile(ProfileName.mid).profile.profile_id == 1
    assert bundle.profile_by_id(2) == ProfileName.high
    with pytest.raises(BundleMismatchError):
        bundle.profile_by_id(7)


def test_bundle_loads_selected_profiles(bundle_dir) -> None:
    bundle = BundleRepo(bundle_dir).load([ProfileName.high])
    assert list(bundle.codebooks) == [ProfileName.high]
    with pytest.raises(InputError):
        bundle.for_profile(ProfileName.low)


def test_tampered_artifact_is_detected(bundle_dir) -> None:
    path = bundle_dir / codebook_file_name(ProfileName.mid)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0x01
    path.write_bytes(bytes(data))
    repo = BundleRepo(bundle_dir)
    repo.load([ProfileName.low])
    with pytest.raises(BundleMismatchError):
        repo.load([ProfileName.mid])


def test_missing_bundle_and_profile(tmp_path, bundle_dir) -> None:
    with pytest.raises(InputError):
        BundleRepo(tmp_path / "nowhere").load()
    manifest = json.loads((bundle_dir / MANIFEST_NAME).read_text())
    del manifest["codebook_files"]["high"]
    del manifest["codebook_hashes"]["high"]
    (bundle_dir / MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(InputError):
        BundleRepo(bundle_dir).load([ProfileName.high])


def test_broken_manifest(bundle_dir) -> None:
    (bundle_dir / MANIFEST_NAME).write_text("{not json")
    with pytest.raises(FormatError):
        BundleRepo(bundle_dir).load()


def test_bundle_hash_is_stable(tmp_path, weights, codebook_sets, make_codebooks) -> None:
    hashes = []
    for run in ("a", "b"):
        repo = BundleRepo(tmp_path / run)
        repo.save_weights(weights)
        for name in ProfileName:
            repo.save_codebooks(codebook_sets[name])
        hashes.append(repo.bundle_hash())
    assert hashes[0] == hashes[1]
    repo.save_codebooks(make_codebooks(get_profile("low"), seed=99))
    assert repo.bundle_hash() != hashes[0]


def test_content_hash() -> None:
    assert content_hash(b"abc") == content_hash(b"abc")
    assert content_hash(b"abc") != content_hash(b"abd")
    assert 0 <= content_hash(b"") < 1 << 64
