import json
import logging
from pathlib import Path
from typing import Iterable, Optional

from pydantic import ValidationError

from app.core.errors import BundleMismatchError, FormatError, InputError
from app.db.binary import content_hash
from app.db.codebook_repo import codebooks_from_bytes, codebooks_to_bytes
from app.db.weights_repo import weights_from_bytes, weights_to_bytes
from app.schemas.bundle import BundleManifest, CodecBundle
from app.schemas.predictor import PredictorWeights
from app.schemas.quantization import CodebookSet, ProfileName

logger = logging.getLogger(__name__)

MANIFEST_NAME = "bundle.json"
WEIGHTS_NAME = "predictor.prdw"


def codebook_file_name(profile: ProfileName) -> str:
    return f"codebooks_{profile.value}.prcb"


class BundleRepo:
    """A bundle directory: predictor weights, one codebook file per profile and a manifest."""

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)

    @property
    def manifest_path(self) -> Path:
        return self.directory / MANIFEST_NAME

    def exists(self) -> bool:
        return self.manifest_path.is_file()

    def read_manifest(self) -> BundleManifest:
        if not self.exists():
            raise InputError(f"{self.directory} is not a codec bundle (no {MANIFEST_NAME})")
        try:
            return BundleManifest.model_validate(json.loads(self.manifest_path.read_text(encoding="utf-8")))
        except (ValueError, ValidationError) as exc:
            raise FormatError(f"{self.manifest_path}: invalid manifest ({exc})") from exc

    def write_manifest(self, manifest: BundleManifest) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")

    def save_weights(self, weights: PredictorWeights, seed: int = 0) -> int:
        """Write the predictor and start a fresh manifest; returns the weights hash."""

        self.directory.mkdir(parents=True, exist_ok=True)
        data = weights_to_bytes(weights)
        (self.directory / WEIGHTS_NAME).write_bytes(data)
        digest = content_hash(data)
        self.write_manifest(BundleManifest(seed=seed, weights_file=WEIGHTS_NAME, weights_hash=f"{digest:016x}"))
        return digest

    def save_codebooks(self, codebooks: CodebookSet, make_default: bool = False) -> int:
        manifest = self.read_manifest()
        name = codebooks.profile.name
        data = codebooks_to_bytes(codebooks)
        (self.directory / codebook_file_name(name)).write_bytes(data)
        digest = content_hash(data)
        manifest.codebook_files[name] = codebook_file_name(name)
        manifest.codebook_hashes[name] = f"{digest:016x}"
        if make_default:
            manifest.default_profile = name
        self.write_manifest(manifest)
        logger.info("Stored %s codebooks in %s (hash %016x)", name.value, self.directory, digest)
        return digest

    def _read_checked(self, file_name: str, expected_hex: str) -> bytes:
        path = self.directory / file_name
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read bundle file {path}: {exc}") from exc
        if f"{content_hash(data):016x}" != expected_hex:
            raise BundleMismatchError(f"{path} does not match the hash recorded in {MANIFEST_NAME}")
        return data

    def load(self, profiles: Optional[Iterable[ProfileName]] = None) -> CodecBundle:
        manifest = self.read_manifest()
        weights = weights_from_bytes(self._read_checked(manifest.weights_file, manifest.weights_hash))
        wanted = list(manifest.codebook_files) if profiles is None else [ProfileName(p) for p in profiles]
        codebooks, hashes = {}, {}
        for name in wanted:
            if name not in manifest.codebook_files:
                raise InputError(f"bundle {self.directory} has no codebooks for profile {name.value}")
            data = self._read_checked(manifest.codebook_files[name], manifest.codebook_hashes[name])
            codebooks[name] = codebooks_from_bytes(data)
            hashes[name] = int(manifest.codebook_hashes[name], 16)
        return CodecBundle(
            weights=weights,
            weights_hash=int(manifest.weights_hash, 16),
            codebooks=codebooks,
            codebook_hashes=hashes,
            path=self.directory,
        )

    def bundle_hash(self) -> str:
        """Digest over the manifest's artifact hashes, stable across re-training with the same seed."""

        manifest = self.read_manifest()
        parts = [manifest.weights_hash] + [manifest.codebook_hashes[p] for p in sorted(manifest.codebook_hashes, key=lambda p: p.value)]
        return f"{content_hash('|'.join(parts).encode('ascii')):016x}"
