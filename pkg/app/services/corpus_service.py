"""Training corpora: directory scans and a seeded synthetic corpus."""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from app.core.errors import EmptyStreamError, InputError
from app.db.feature_repo import FeatureRepo
from app.schemas.features import (
    FRAME_RATE,
    NB_CEPSTRUM,
    PITCH_MAX,
    PITCH_MIN,
    SAMPLE_RATE,
    WINDOW_SIZE,
    FeatureStream,
    PcmSignal,
)
from app.services.feature_service import analyze, frame_count, read_wav, write_wav
from app.services.synthesis_service import synthesize_stream

logger = logging.getLogger(__name__)

CORPUS_SUFFIXES = (".wav", ".prfs")

# Mean raw cepstrum of the synthetic voice: about -30 dB per band with a gentle downward tilt.
_BASE_CEPSTRUM = np.array([-12.7, 2.0, -0.6, 0.4, -0.3, 0.2] + [0.0] * (NB_CEPSTRUM - 6))
_MODULATION = 0.8 / (1.0 + np.arange(NB_CEPSTRUM) / 3.0)


def synthetic_stream(frames: int, rng: np.random.Generator, name: str = "") -> FeatureStream:
    """Cepstra oscillating around a fixed spectrum with a 16-28 frame period, slowly drifting pitch."""

    n = np.arange(frames)[:, None]
    period = rng.uniform(16.0, 28.0)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=NB_CEPSTRUM)
    offset = rng.normal(0.0, 0.3, size=NB_CEPSTRUM) / (1.0 + np.arange(NB_CEPSTRUM))
    cepstrum = (
        _BASE_CEPSTRUM
        + offset
        + _MODULATION * np.sin(2.0 * np.pi * n / period + phase)
        + rng.normal(0.0, 0.03, size=(frames, NB_CEPSTRUM))
    )
    t = np.arange(frames)
    pitch_center = rng.uniform(70.0, 180.0)
    pitch_phase = rng.uniform(0.0, 2.0 * np.pi)
    periods = np.clip(np.rint(pitch_center * (1.0 + 0.15 * np.sin(2.0 * np.pi * t / 150.0 + pitch_phase))), PITCH_MIN, PITCH_MAX)
    correlation = np.clip(0.6 + 0.35 * np.sin(2.0 * np.pi * t / period + pitch_phase), 0.0, 1.0)
    return FeatureStream(cepstrum=cepstrum, pitch_period=periods, pitch_correlation=correlation, name=name)


def synthetic_corpus(n_utterances: int = 50, seconds: float = 3.0, seed: int = 1234) -> List[FeatureStream]:
    if n_utterances < 1:
        raise InputError("a synthetic corpus needs at least one utterance")
    rng = np.random.default_rng(seed)
    frames = frame_count(int(round(seconds * SAMPLE_RATE)))
    return [synthetic_stream(frames, rng, name=f"synthetic_{i:03d}") for i in range(n_utterances)]


def synthetic_pcm(stream: FeatureStream, seed: int = 0) -> PcmSignal:
    """Render a synthetic stream through LPC synthesis with pulse-train excitation."""

    return synthesize_stream(stream, seed=seed)


def corpus_files(directory: Path) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"corpus directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in CORPUS_SUFFIXES)


def _load_one(path: Path) -> Optional[FeatureStream]:
    if path.suffix.lower() == ".prfs":
        return FeatureRepo().load(path)
    pcm = read_wav(path)
    if len(pcm) < WINDOW_SIZE:
        logger.warning("Skipping %s: shorter than one analysis window", path.name)
        return None
    return analyze(pcm, name=path.stem)


def load_corpus(directory: Path, workers: int = 4) -> List[FeatureStream]:
    """Analyze WAV files and read feature files, in file-name order."""

    files = corpus_files(directory)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        streams = [s for s in pool.map(_load_one, files) if s is not None and len(s)]
    if not streams:
        raise EmptyStreamError(f"no usable utterances in {directory}")
    logger.info(
        "Loaded %d utterances (%.1f s) from %s",
        len(streams),
        sum(len(s) for s in streams) / FRAME_RATE,
        directory,
    )
    return streams


def write_corpus(streams: List[FeatureStream], directory: Path, wav: bool = False, seed: int = 0) -> List[Path]:
    """Store streams as feature files, or as synthesized WAV files when ``wav`` is set."""

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    repo = FeatureRepo()
    written = []
    for i, stream in enumerate(streams):
        name = stream.name or f"utt_{i:03d}"
        if wav:
            path = directory / f"{name}.wav"
            write_wav(path, synthetic_pcm(stream, seed=seed + i))
        else:
            path = directory / f"{name}.prfs"
            repo.save(stream, path)
        written.append(path)
    return written
