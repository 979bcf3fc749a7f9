"""Decoder-side LPC synthesis from Bark cepstra.

Band energies are spread over the 161-bin spectrum, turned into an
autocorrelation and fitted with a 16th-order all-pole model. A pulse train at
the pitch period mixed with white noise drives the filter in place of a neural
excitation model.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.fft import idct, irfft
from scipy.signal import lfilter, lfiltic

from app.core.errors import InputError, NumericError
from app.schemas.features import HOP_SIZE, NB_CEPSTRUM, SAMPLE_RATE, WINDOW_SIZE, FeatureStream, PcmSignal
from app.schemas.predictor import FeatureScaler
from app.schemas.synthesis import LPC_ORDER, LpcModel, SynthState
from app.services.feature_service import BAND_EDGES_BINS, NB_BINS
from app.services.predictor_service import unscale

logger = logging.getLogger(__name__)

LAG_WINDOW_HZ = 60.0
WHITE_NOISE_CORRECTION = 1e-4

_LAGS = np.arange(LPC_ORDER + 1)
LAG_WINDOW = np.exp(-0.5 * (2.0 * np.pi * LAG_WINDOW_HZ * _LAGS / SAMPLE_RATE) ** 2)


def cepstrum_to_band_energies(cepstrum: np.ndarray, scaler: Optional[FeatureScaler] = None) -> np.ndarray:
    """Invert the cepstral transform; pass ``scaler`` when ``cepstrum`` is in scaled units."""

    cepstrum = np.asarray(cepstrum, dtype=np.float64)
    if cepstrum.shape[-1] != NB_CEPSTRUM:
        raise InputError(f"expected {NB_CEPSTRUM} cepstral coefficients, got {cepstrum.shape[-1]}")
    if scaler is not None:
        cepstrum = unscale(cepstrum, scaler)
    return 10.0 ** idct(cepstrum, type=2, norm="ortho", axis=-1)


def levinson_durbin(autocorrelation: np.ndarray, order: int = LPC_ORDER) -> Tuple[np.ndarray, float, np.ndarray]:
    """Predictor coefficients, final prediction error and reflection coefficients."""

    r = np.asarray(autocorrelation, dtype=np.float64)
    if r.shape[0] < order + 1:
        raise InputError(f"need {order + 1} autocorrelation lags, got {r.shape[0]}")
    if r[0] <= 0.0:
        raise NumericError("autocorrelation at lag 0 must be positive")
    a = np.zeros(order)
    k = np.zeros(order)
    error = float(r[0])
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k[i] = acc / error
        if abs(k[i]) >= 1.0:
            raise NumericError(f"autocorrelation is not positive definite (|k_{i + 1}| = {abs(k[i]):.6f})")
        previous = a[:i].copy()
        a[i] = k[i]
        a[:i] = previous - k[i] * previous[::-1]
        error *= 1.0 - k[i] * k[i]
    return a, error, k


def band_autocorrelation(energies: np.ndarray) -> np.ndarray:
    """Lag-windowed autocorrelation of the band energies spread over the spectrum."""

    energies = np.asarray(energies, dtype=np.float64)
    if energies.shape != (NB_CEPSTRUM,):
        raise InputError(f"expected {NB_CEPSTRUM} band energies")
    if np.any(~np.isfinite(energies)) or np.any(energies <= 0.0):
        raise InputError("band energies must be finite and strictly positive")
    spectrum = np.interp(np.arange(NB_BINS), BAND_EDGES_BINS, energies)
    return irfft(spectrum, n=WINDOW_SIZE)[: LPC_ORDER + 1] * LAG_WINDOW


def band_energies_to_lpc(energies: np.ndarray) -> LpcModel:
    r = band_autocorrelation(energies)
    rms = float(np.sqrt(r[0]))
    r[0] *= 1.0 + WHITE_NOISE_CORRECTION
    a, error, k = levinson_durbin(r)
    return LpcModel(coefficients=a, gain=float(np.sqrt(error)), reflection=k, rms=rms)


def make_excitation(gain: float, period: int, correlation: float, state: SynthState, length: int = HOP_SIZE) -> np.ndarray:
    """Unit-power pulse train and white noise mixed by sqrt(corr) / sqrt(1 - corr), times ``gain``.

    Advances the pulse phase and the noise generator in ``state``.
    """

    correlation = float(np.clip(correlation, 0.0, 1.0))
    period = int(period)
    pulses = np.zeros(length)
    positions = np.arange(state.next_pulse, length, period)
    pulses[positions] = np.sqrt(period)
    state.next_pulse = int(positions[-1] + period - length) if positions.size else state.next_pulse - length
    noise = state.rng.standard_normal(length)
    return gain * (np.sqrt(correlation) * pulses + np.sqrt(1.0 - correlation) * noise)


def synthesize_frame(model: LpcModel, pitch: Tuple[int, float], state: SynthState) -> np.ndarray:
    """160 output samples (normalized float); continues from and updates ``state.history``."""

    excitation = make_excitation(model.gain, pitch[0], pitch[1], state)
    zi = lfiltic([1.0], model.denominator, state.history[::-1])
    out, _ = lfilter([1.0], model.denominator, excitation, zi=zi)
    state.history = np.concatenate([state.history, out])[-LPC_ORDER:]
    return out


def synthesize_stream(stream: FeatureStream, seed: int = 0) -> PcmSignal:
    """Render raw-unit cepstra and pitch to 16-bit PCM, one hop per frame."""

    state = SynthState.seeded(seed)
    chunks = []
    for i in range(len(stream)):
        model = band_energies_to_lpc(cepstrum_to_band_energies(stream.cepstrum[i]))
        pitch = (int(stream.pitch_period[i]), float(stream.pitch_correlation[i]))
        chunks.append(synthesize_frame(model, pitch, state))
    samples = np.concatenate(chunks) if chunks else np.zeros(0)
    if not np.all(np.isfinite(samples)):
        raise NumericError("synthesis produced non-finite samples")
    logger.debug("Synthesized %d frames (%d samples)", len(stream), samples.size)
    return PcmSignal(samples=np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16))
