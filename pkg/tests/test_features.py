from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from app.core.errors import EmptyStreamError, InputError
from app.schemas.features import NB_CEPSTRUM, SAMPLE_RATE, WINDOW_SIZE, PcmSignal
from app.services.feature_service import (
    ENERGY_FLOOR,
    analyze,
    band_energies,
    bark_cepstrum,
    estimate_pitch,
    frame_count,
    frame_signal,
    read_wav,
    write_wav,
)


def _noise(samples: int, seed: int = 0, std: float = 3000.0) -> PcmSignal:
    return PcmSignal(samples=np.random.default_rng(seed).normal(0.0, std, size=samples))


@pytest.mark.parametrize("samples, frames", [(16000, 99), (320, 1), (480, 2), (479, 1), (319, 0)])
def test_frame_count(samples: int, frames: int) -> None:
    assert frame_count(samples) == frames


def test_frame_count_matches_framing_for_random_lengths() -> None:
    rng = np.random.default_rng(3)
    for length in rng.integers(WINDOW_SIZE, 5000, size=25):
        frames = frame_signal(PcmSignal(samples=np.zeros(int(length))))
        assert frames.shape == ((int(length) - 320) // 160 + 1, WINDOW_SIZE)


def test_short_signal_is_an_empty_stream() -> None:
    with pytest.raises(EmptyStreamError):
        frame_signal(PcmSignal(samples=np.zeros(319)))
    with pytest.raises(EmptyStreamError):
        analyze(PcmSignal(samples=np.zeros(0, dtype=np.int16)))


def test_silence_gives_floor_constant() -> None:
    c = bark_cepstrum(np.zeros(WINDOW_SIZE))
    assert c.shape == (NB_CEPSTRUM,)
    assert c[0] == pytest.approx(np.log10(ENERGY_FLOOR) * np.sqrt(NB_CEPSTRUM))
    assert np.allclose(c[1:], 0.0, atol=1e-12)


def test_white_noise_cepstrum_dominated_by_c0() -> None:
    frame = frame_signal(_noise(WINDOW_SIZE, seed=1, std=300.0))[0]
    c = bark_cepstrum(frame)
    assert np.all(np.abs(c[1:]) < 0.25 * abs(c[0]))


def test_sine_peaks_in_its_band() -> None:
    t = np.arange(WINDOW_SIZE) / SAMPLE_RATE
    frame = frame_signal(PcmSignal(samples=10000.0 * np.sin(2.0 * np.pi * 1000.0 * t)))[0]
    energies = band_energies(frame)
    # 1 kHz is the lower edge of band 5
    assert int(np.argmax(energies)) == 5


def test_gain_only_moves_c0() -> None:
    frame = frame_signal(_noise(WINDOW_SIZE, seed=2))[0]
    base, louder = bark_cepstrum(frame), bark_cepstrum(2.0 * frame)
    assert louder[0] - base[0] == pytest.approx(np.sqrt(NB_CEPSTRUM) * np.log10(4.0), abs=1e-6)
    assert np.allclose(louder[1:], base[1:], atol=1e-6)


def test_identical_windows_identical_cepstra() -> None:
    block = _noise(160, seed=4).samples
    pcm = PcmSignal(samples=np.tile(block, 6))
    frames = frame_signal(pcm)
    assert np.array_equal(bark_cepstrum(frames[0]), bark_cepstrum(frames[2]))


def test_pitch_of_pulse_train() -> None:
    samples = np.zeros(3200)
    samples[::160] = 16000.0
    period, correlation = estimate_pitch(PcmSignal(samples=samples), 10)
    assert abs(period - 160) <= 1
    assert correlation > 0.9


def test_pitch_of_sine() -> None:
    t = np.arange(3200) / SAMPLE_RATE
    period, correlation = estimate_pitch(PcmSignal(samples=10000.0 * np.sin(2.0 * np.pi * 200.0 * t)), 12)
    assert abs(period - 80) <= 1
    assert correlation > 0.9


def test_pitch_of_noise_is_weakly_correlated() -> None:
    pcm = _noise(3200, seed=5)
    correlations = [estimate_pitch(pcm, i)[1] for i in range(2, 18)]
    assert np.mean(correlations) < 0.4


def test_pitch_frame_out_of_range() -> None:
    with pytest.raises(InputError):
        estimate_pitch(_noise(640), 5)


def test_analyze_one_second() -> None:
    stream = analyze(_noise(SAMPLE_RATE, seed=6), name="noise")
    assert len(stream) == 99
    assert stream.features().shape == (99, 20)
    assert stream.name == "noise"
    assert np.all((stream.pitch_period >= 32) & (stream.pitch_period <= 256))


def test_analyze_converts_samples_once(monkeypatch) -> None:
    pcm = _noise(4800, seed=4)
    expected = [estimate_pitch(pcm, i) for i in range(frame_count(len(pcm)))]
    calls = []
    original = PcmSignal.as_float

    def counting(self):
        calls.append(1)
        return original(self)

    monkeypatch.setattr(PcmSignal, "as_float", counting)
    stream = analyze(pcm)
    assert len(calls) == 1
    assert stream.pitch_period.tolist() == [p for p, _ in expected]
    assert stream.pitch_correlation.tolist() == [c for _, c in expected]


def test_analyze_is_deterministic() -> None:
    pcm = _noise(4000, seed=7)
    assert np.array_equal(analyze(pcm).features(), analyze(pcm).features())


def test_concatenation_away_from_seam() -> None:
    a, b = _noise(1600, seed=8), _noise(1600, seed=9)
    joined = analyze(PcmSignal(samples=np.concatenate([a.samples, b.samples])))
    left, right = analyze(a), analyze(b)
    assert np.array_equal(joined.cepstrum[: len(left)], left.cepstrum)
    # frames starting at the seam see exactly B's samples
    assert np.array_equal(joined.cepstrum[10 : 10 + len(right)], right.cepstrum)


def test_wav_roundtrip_and_rate_check(tmp_path: Path) -> None:
    pcm = _noise(2000, seed=10)
    path = tmp_path / "x.wav"
    write_wav(path, pcm)
    assert np.array_equal(read_wav(path).samples, pcm.samples)

    wrong = tmp_path / "8k.wav"
    wavfile.write(wrong, 8000, pcm.samples)
    with pytest.raises(InputError, match="8000"):
        read_wav(wrong)


def test_raw_pcm_input(tmp_path: Path) -> None:
    pcm = _noise(800, seed=11)
    path = tmp_path / "x.raw"
    pcm.samples.astype("<i2").tofile(path)
    assert np.array_equal(read_wav(path, raw=True).samples, pcm.samples)
