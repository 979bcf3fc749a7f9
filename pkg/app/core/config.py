from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import AliasChoices, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigurationError


class Settings(BaseSettings):
    """Codec settings sourced from environment variables, an optional config file and CLI flags."""

    project_name: str = "Predictive Speech Codec"
    api_prefix: str = "/api/v1"
    log_level: str = Field(default="INFO", validation_alias=AliasChoices("PREDCODEC_LOG_LEVEL", "LOG_LEVEL"))
    seed: int = Field(default=1234, ge=0)
    workers: int = Field(default=4, ge=1, description="Threads used for corpus scans")
    bundle_dir: Path = Field(
        default=Path("bundle"),
        validation_alias=AliasChoices("PREDCODEC_BUNDLE_DIR", "BUNDLE_DIR"),
    )
    default_profile: Literal["low", "mid", "high"] = "mid"

    # Predictor training
    learning_rate: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    clip_norm: float = Field(default=1.0, gt=0)
    optimizer: Literal["sgd", "adam"] = "sgd"
    epochs: int = Field(default=30, ge=0)
    truncation_length: int = Field(default=64, gt=0, description="BPTT window in frames")
    noise_std: float = Field(default=0.02, ge=0, description="Input perturbation in scaled units")
    batch_size: int = Field(default=16, gt=0)
    gru1_units: int = Field(default=384, gt=0)
    gru2_units: int = Field(default=128, gt=0)

    # Codebook training
    kmeans_max_iters: int = Field(default=25, gt=0)
    calibration_rounds: int = Field(default=0, ge=0, description="Closed-loop threshold refinement passes")
    segment_seconds: float = Field(default=2.0, gt=0)
    max_segments_per_utterance: int = Field(default=8, gt=0)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="PREDCODEC_",
        extra="ignore",
        populate_by_name=True,
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_level(cls, value):
        """Accept lowercase level names."""

        if isinstance(value, str):
            return value.strip().upper()
        return value


def read_config_file(path: Path) -> Dict[str, str]:
    """Parse a declarative ``key = value`` config file."""

    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigurationError(f"Cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in Settings.model_fields:
            raise ConfigurationError(f"{path}:{lineno}: unknown setting '{key}'")
        values[key] = value
    return values


def load_settings(config_file: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """Layer defaults < environment < config file < explicit overrides (CLI flags)."""

    layered: Dict[str, Any] = {}
    if config_file is not None:
        layered.update(read_config_file(config_file))
    layered.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return Settings(**layered)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid settings: {exc}") from exc


@lru_cache()
def get_settings() -> Settings:
    """Return cached settings instance."""

    return Settings()
