import numpy as np
import pytest
from scipy.signal import freqz, lfilter

from app.core.errors import InputError, NumericError
from app.schemas.features import HOP_SIZE, NB_CEPSTRUM, SAMPLE_RATE, WINDOW_SIZE
from app.schemas.synthesis import LPC_ORDER, LpcModel, SynthState
from app.services.feature_service import BAND_EDGES_HZ, ENERGY_FLOOR, band_energies, bark_cepstrum
from app.services.synthesis_service import (
    band_autocorrelation,
    band_energies_to_lpc,
    cepstrum_to_band_energies,
    levinson_durbin,
    make_excitation,
    synthesize_frame,
    synthesize_stream,
)

AR1 = 2 * 0.95 * np.cos(np.pi / 4)
AR2 = -0.9025


def ar2_autocorrelation(a1: float, a2: float, lags: int) -> np.ndarray:
    r = np.zeros(lags)
    r[0] = 1.0
    r[1] = a1 / (1.0 - a2)
    for k in range(2, lags):
        r[k] = a1 * r[k - 1] + a2 * r[k - 2]
    return r


def flat_model(gain: float = 1.0) -> LpcModel:
    return LpcModel(coefficients=np.zeros(LPC_ORDER), gain=gain, reflection=np.zeros(LPC_ORDER))


def test_cepstrum_inverts_to_band_energies() -> None:
    frame = np.random.default_rng(0).normal(0.0, 0.1, WINDOW_SIZE)
    energies = cepstrum_to_band_energies(bark_cepstrum(frame))
    np.testing.assert_allclose(energies, band_energies(frame) + ENERGY_FLOOR, rtol=1e-6)


def test_zero_cepstrum_is_unit_energy() -> None:
    np.testing.assert_allclose(cepstrum_to_band_energies(np.zeros(NB_CEPSTRUM)), np.ones(NB_CEPSTRUM))


def test_band_energies_are_positive() -> None:
    c = np.random.default_rng(1).normal(0.0, 5.0, (10, NB_CEPSTRUM))
    assert np.all(cepstrum_to_band_energies(c) > 0.0)


def test_cepstrum_dimension_is_checked() -> None:
    with pytest.raises(InputError):
        cepstrum_to_band_energies(np.zeros(NB_CEPSTRUM - 1))


def test_flat_spectrum_gives_flat_model() -> None:
    model = band_energies_to_lpc(np.full(NB_CEPSTRUM, 4.0))
    np.testing.assert_allclose(model.coefficients, 0.0, atol=1e-9)
    assert model.gain == pytest.approx(2.0, rel=1e-3)
    assert model.rms == pytest.approx(2.0, rel=1e-9)


def test_levinson_recovers_ar2() -> None:
    r = ar2_autocorrelation(AR1, AR2, LPC_ORDER + 1)
    a, error, k = levinson_durbin(r, order=2)
    np.testing.assert_allclose(a, [AR1, AR2], atol=1e-9)
    assert 0.0 < error < 1.0
    a16, error16, k16 = levinson_durbin(r)
    np.testing.assert_allclose(a16[:2], [AR1, AR2], atol=1e-9)
    np.testing.assert_allclose(a16[2:], 0.0, atol=1e-9)
    np.testing.assert_allclose(k16[2:], 0.0, atol=1e-9)
    assert error16 == pytest.approx(error, rel=1e-9)


def test_levinson_refuses_non_positive_definite_input() -> None:
    with pytest.raises(NumericError):
        levinson_durbin(np.array([1.0, 1.5, 0.0]), order=2)
    with pytest.raises(NumericError):
        levinson_durbin(np.zeros(LPC_ORDER + 1))
    with pytest.raises(InputError):
        levinson_durbin(np.ones(3), order=4)


def test_resonant_band_energies_give_resonant_envelope() -> None:
    # AR(2) with poles at +-pi/2: a spectral peak at 4 kHz
    freqs = np.array(BAND_EDGES_HZ, dtype=np.float64)
    _, response = freqz([1.0], [1.0, 0.0, -AR2], worN=2 * np.pi * freqs / SAMPLE_RATE)
    model = band_energies_to_lpc(np.abs(response) ** 2)
    grid, envelope = freqz([model.gain], model.denominator, worN=1024, fs=SAMPLE_RATE)
    assert 3200.0 <= grid[np.argmax(np.abs(envelope))] <= 4800.0


def test_ar2_through_band_energies_stays_near_its_coefficients() -> None:
    freqs = 2.0 * np.pi * np.array(BAND_EDGES_HZ, dtype=np.float64) / SAMPLE_RATE
    _, response = freqz([1.0], [1.0, -AR1, -AR2], worN=freqs)
    a, _, _ = levinson_durbin(band_autocorrelation(np.abs(response) ** 2), order=2)
    # the 18-band interpolation moves the coefficients by a few hundredths
    assert np.max(np.abs(a - [AR1, AR2])) < 0.1


def test_lpc_envelope_within_3db() -> None:
    rng = np.random.default_rng(12)
    freqs = 2.0 * np.pi * np.array(BAND_EDGES_HZ, dtype=np.float64) / SAMPLE_RATE
    worst = 0.0
    for _ in range(200):
        cepstrum = np.zeros(NB_CEPSTRUM)
        cepstrum[0] = rng.normal(0.0, 1.0)
        cepstrum[1:5] = rng.normal(0.0, 0.6, 4)
        energies = cepstrum_to_band_energies(cepstrum)
        model = band_energies_to_lpc(energies)
        _, response = freqz([model.gain], model.denominator, worN=freqs)
        deviation = 10.0 * np.log10(np.abs(response) ** 2 / energies)
        worst = max(worst, float(np.max(np.abs(deviation))))
    assert worst < 3.0


def test_lpc_rejects_non_positive_energies() -> None:
    energies = np.ones(NB_CEPSTRUM)
    energies[3] = 0.0
    with pytest.raises(InputError):
        band_energies_to_lpc(energies)


def test_zero_gain_is_silent() -> None:
    out = synthesize_frame(flat_model(0.0), (100, 0.5), SynthState.seeded(0))
    assert out.shape == (HOP_SIZE,)
    assert np.all(out == 0.0)


def test_voiced_flat_model_is_an_impulse_train() -> None:
    state = SynthState.seeded(0)
    for _ in range(3):
        out = synthesize_frame(flat_model(), (HOP_SIZE, 1.0), state)
        expected = np.zeros(HOP_SIZE)
        expected[0] = np.sqrt(HOP_SIZE)
        np.testing.assert_allclose(out, expected, atol=1e-12)


def test_pulse_phase_carries_across_frames() -> None:
    state = SynthState.seeded(0)
    first = make_excitation(1.0, 100, 1.0, state)
    second = make_excitation(1.0, 100, 1.0, state)
    assert list(np.flatnonzero(first)) == [0, 100]
    assert list(np.flatnonzero(second)) == [40, 140]


def test_output_level_follows_gain() -> None:
    rms = []
    for gain in (0.5, 1.0, 2.0):
        out = synthesize_frame(flat_model(gain), (80, 0.3), SynthState.seeded(4))
        rms.append(float(np.sqrt(np.mean(out**2))))
    assert rms[0] < rms[1] < rms[2]
    assert rms[2] / rms[1] == pytest.approx(2.0, rel=1e-9)


def test_filter_state_is_continuous_across_frames() -> None:
    model = band_energies_to_lpc(
        np.abs(freqz([1.0], [1.0, -AR1, -AR2], worN=2 * np.pi * np.array(BAND_EDGES_HZ) / SAMPLE_RATE)[1]) ** 2
    )
    pitch = (123, 0.6)
    state, mirror = SynthState.seeded(9), SynthState.seeded(9)
    chunks = [synthesize_frame(model, pitch, state) for _ in range(4)]
    excitation = np.concatenate([make_excitation(model.gain, *pitch, mirror) for _ in range(4)])
    expected = lfilter([1.0], model.denominator, excitation)
    np.testing.assert_allclose(np.concatenate(chunks), expected, atol=1e-9)


def test_stream_synthesis_length(corpus) -> None:
    stream = corpus[0].slice(0, 7)
    pcm = synthesize_stream(stream, seed=1)
    assert len(pcm) == 7 * HOP_SIZE
    assert np.array_equal(synthesize_stream(stream, seed=1).samples, pcm.samples)


def test_random_band_energies_give_stable_models() -> None:
    rng = np.random.default_rng(2)
    for _ in range(200):
        model = band_energies_to_lpc(10.0 ** rng.uniform(-2.0, 2.0, NB_CEPSTRUM))
        assert np.all(np.abs(model.reflection) < 1.0)
        assert model.gain > 0.0


def test_ten_seconds_stay_bounded() -> None:
    rng = np.random.default_rng(5)
    state = SynthState.seeded(5)
    peak = 0.0
    for n in range(1000):
        if n % 50 == 0:
            model = band_energies_to_lpc(10.0 ** np.convolve(rng.uniform(-1.0, 1.0, NB_CEPSTRUM + 4), np.ones(5) / 5, "valid"))
        out = synthesize_frame(model, (int(rng.integers(40, 256)), float(rng.uniform())), state)
        assert np.all(np.isfinite(out))
        peak = max(peak, float(np.max(np.abs(out))) / model.rms)
    assert peak < 100.0
