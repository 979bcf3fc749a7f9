"""Frame-level analysis: 18 Bark cepstra plus pitch period/correlation per 10 ms hop."""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, rfft
from scipy.io import wavfile
from scipy.signal import get_window

from app.core.errors import EmptyStreamError, InputError
from app.schemas.features import (
    HOP_SIZE,
    NB_CEPSTRUM,
    PITCH_MAX,
    PITCH_MIN,
    SAMPLE_RATE,
    WINDOW_SIZE,
    FeatureStream,
    PcmSignal,
)

logger = logging.getLogger(__name__)

ENERGY_FLOOR = 1e-10
PITCH_BUFFER = 640
PITCH_SPAN = PITCH_BUFFER - PITCH_MAX
OCTAVE_TOLERANCE = 0.05

# Band edges in Hz; with a 320-point FFT each bin is 50 Hz wide.
BAND_EDGES_HZ = (0, 200, 400, 600, 800, 1000, 1200, 1400, 1600, 2000, 2400, 2800, 3200, 4000, 4800, 5600, 6800, 8000)
NB_BINS = WINDOW_SIZE // 2 + 1
BAND_EDGES_BINS = np.array([hz * WINDOW_SIZE // SAMPLE_RATE for hz in BAND_EDGES_HZ])

WINDOW = get_window("hann", WINDOW_SIZE, fftbins=True)
WINDOW_POWER = float(np.sum(WINDOW**2))


def _band_filterbank() -> np.ndarray:
    """Triangular interband weights (18 x 161), rows normalized to unit sum."""

    bank = np.zeros((NB_CEPSTRUM, NB_BINS))
    for i in range(NB_CEPSTRUM - 1):
        lo, hi = BAND_EDGES_BINS[i], BAND_EDGES_BINS[i + 1]
        for k in range(lo, hi):
            frac = (k - lo) / (hi - lo)
            bank[i, k] += 1.0 - frac
            bank[i + 1, k] += frac
    bank[-1, BAND_EDGES_BINS[-1]] += 1.0
    return bank / bank.sum(axis=1, keepdims=True)


FILTERBANK = _band_filterbank()


def read_wav(path: Path, raw: bool = False) -> PcmSignal:
    """Load 16-bit mono 16 kHz PCM; ``raw`` reads headerless little-endian samples."""

    path = Path(path)
    if raw:
        return PcmSignal(samples=np.fromfile(path, dtype="<i2"))
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise InputError(f"{path}: not a readable WAV file ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")
    if data.ndim != 1:
        raise InputError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype != np.int16:
        raise InputError(f"{path}: sample format {data.dtype}, expected 16-bit PCM")
    return PcmSignal(samples=data)


def write_wav(path: Path, pcm: PcmSignal) -> None:
    wavfile.write(Path(path), SAMPLE_RATE, pcm.samples)


def frame_count(num_samples: int) -> int:
    if num_samples < WINDOW_SIZE:
        return 0
    return (num_samples - WINDOW_SIZE) // HOP_SIZE + 1


def _require_window(pcm: PcmSignal) -> None:
    if len(pcm) < WINDOW_SIZE:
        raise EmptyStreamError(f"signal has {len(pcm)} samples, shorter than one {WINDOW_SIZE}-sample window")


def frame_signal(pcm: PcmSignal) -> np.ndarray:
    """Hann-windowed 320-sample frames at a 160-sample hop, shape (frames, 320)."""

    _require_window(pcm)
    return _windowed_frames(pcm.as_float())


def _windowed_frames(x: np.ndarray) -> np.ndarray:
    return sliding_window_view(x, WINDOW_SIZE)[::HOP_SIZE] * WINDOW


def band_energies(frame: np.ndarray) -> np.ndarray:
    """Per-band power of a windowed frame; white noise of variance s gives s in every band."""

    spectrum = np.abs(rfft(frame, n=WINDOW_SIZE)) ** 2 / WINDOW_POWER
    return FILTERBANK @ spectrum


def bark_cepstrum(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] != WINDOW_SIZE:
        raise InputError(f"frame must have {WINDOW_SIZE} samples, got {frame.shape[-1]}")
    log_energy = np.log10(band_energies(frame) + ENERGY_FLOOR)
    return dct(log_energy, type=2, norm="ortho")


def _normalized_autocorrelation(buffer: np.ndarray) -> np.ndarray:
    """NCC of the newest PITCH_SPAN samples against each lag in [PITCH_MIN, PITCH_MAX]."""

    current = buffer[PITCH_BUFFER - PITCH_SPAN :]
    # row j starts at sample j, i.e. lag PITCH_MAX - j; reverse for ascending lags
    past = sliding_window_view(buffer[: PITCH_BUFFER - PITCH_MIN], PITCH_SPAN)[::-1]
    cross = past @ current
    denom = float(current @ current) * np.einsum("ij,ij->i", past, past)
    ncc = np.zeros_like(cross)
    valid = denom > 0.0
    ncc[valid] = cross[valid] / np.sqrt(denom[valid])
    return ncc


def estimate_pitch(pcm: PcmSignal, frame_index: int) -> Tuple[int, float]:
    """Pitch period (samples) and periodicity for one frame from a 640-sample look-back buffer."""

    n_frames = frame_count(len(pcm))
    if not 0 <= frame_index < n_frames:
        raise InputError(f"frame {frame_index} outside stream of {n_frames} frames")
    return _pitch_at(pcm.as_float(), frame_index)


def _pitch_at(x: np.ndarray, frame_index: int) -> Tuple[int, float]:
    end = frame_index * HOP_SIZE + WINDOW_SIZE
    buffer = np.zeros(PITCH_BUFFER)
    start = max(0, end - PITCH_BUFFER)
    buffer[PITCH_BUFFER - (end - start) :] = x[start:end]

    ncc = _normalized_autocorrelation(buffer)
    best = float(ncc.max())
    choice = int(np.argmax(ncc))
    if best > 0.0:
        # smallest-lag local peak close to the global maximum guards against octave errors
        for i in range(ncc.shape[0]):
            left = ncc[i - 1] if i > 0 else -np.inf
            right = ncc[i + 1] if i + 1 < ncc.shape[0] else -np.inf
            if ncc[i] >= best - OCTAVE_TOLERANCE * best and ncc[i] >= left and ncc[i] >= right:
                choice = i
                break
    period = PITCH_MIN + choice
    correlation = float(np.clip(ncc[choice], 0.0, 1.0))
    return period, correlation


def analyze(pcm: PcmSignal, name: str = "") -> FeatureStream:
    _require_window(pcm)
    x = pcm.as_float()
    frames = _windowed_frames(x)
    cepstra = np.stack([bark_cepstrum(frame) for frame in frames])
    pitch = [_pitch_at(x, i) for i in range(frames.shape[0])]
    logger.debug("Analyzed %s: %d samples -> %d frames", name or "<pcm>", len(pcm), frames.shape[0])
    return FeatureStream(
        cepstrum=cepstra,
        pitch_period=[p for p, _ in pitch],
        pitch_correlation=[c for _, c in pitch],
        name=name,
    )
