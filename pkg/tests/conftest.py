from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pytest

from app.core.config import get_settings
from app.db.bundle_repo import BundleRepo
from app.schemas.quantization import BitrateProfile, Codebook, CodebookSet, ProfileName, QuantizerRole
from app.services.corpus_service import synthetic_corpus
from app.services.predictor_service import fit_scaler, init_weights
from app.services.quantization_service import PROFILE_TABLE, snap

# Spread of random centroids per role, in scaled units.
_CENTROID_SPREAD = {
    QuantizerRole.SQ_L: 0.6,
    QuantizerRole.SQ_S: 0.15,
    QuantizerRole.VQ_L1: 0.3,
    QuantizerRole.VQ_L2: 0.08,
    QuantizerRole.VQ_S: 0.1,
}


def random_codebooks(
    profile: BitrateProfile,
    seed: int = 0,
    theta_sq: float = 0.3,
    theta_vq: float = 5.0,
    counts: Optional[Dict[QuantizerRole, np.ndarray]] = None,
) -> CodebookSet:
    """Full-size codebooks with random centroids on the residual grid."""

    rng = np.random.default_rng(seed)
    if not profile.always_large:
        profile = profile.with_thresholds(theta_sq, theta_vq)
    books = {
        role: Codebook(role=role, centroids=snap(rng.normal(0.0, _CENTROID_SPREAD[role], size=(1 << bits, role.dim))))
        for role, bits in profile.role_bits().items()
    }
    return CodebookSet(profile=profile, codebooks=books, counts=counts or {})


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()  # type: ignore[attr-defined]
    yield
    get_settings.cache_clear()  # type: ignore[attr-defined]


@pytest.fixture(scope="session")
def corpus():
    return synthetic_corpus(6, seconds=0.5, seed=11)


@pytest.fixture(scope="session")
def scaler(corpus):
    return fit_scaler(corpus)


@pytest.fixture(scope="session")
def weights(scaler):
    return init_weights(scaler, gru1_units=16, gru2_units=8, seed=5)


@pytest.fixture(scope="session")
def codebook_sets() -> Dict[ProfileName, CodebookSet]:
    return {name: random_codebooks(PROFILE_TABLE[name], seed=i) for i, name in enumerate(ProfileName)}


@pytest.fixture
def bundle_dir(tmp_path: Path, weights, codebook_sets) -> Path:
    repo = BundleRepo(tmp_path / "bundle")
    repo.save_weights(weights, seed=5)
    for i, name in enumerate(ProfileName):
        repo.save_codebooks(codebook_sets[name], make_default=(i == 0))
    return repo.directory


@pytest.fixture
def make_codebooks():
    return random_codebooks
