"""Pitch parameter coding: 11 bits per 4-frame packet (7-bit period, 4-bit correlation)."""

import math
from typing import Tuple

import numpy as np

from app.core.errors import CorruptStreamError
from app.schemas.features import FRAME_RATE, PITCH_MAX, PITCH_MIN, FeatureStream

PERIOD_BITS = 7
CORRELATION_BITS = 4
PITCH_BITS = PERIOD_BITS + CORRELATION_BITS
FRAMES_PER_PACKET = 4
PITCH_BITRATE = PITCH_BITS * FRAME_RATE // FRAMES_PER_PACKET

_PERIOD_LEVELS = (1 << PERIOD_BITS) - 1
_CORRELATION_LEVELS = 1 << CORRELATION_BITS
_LOG_SPAN = math.log(PITCH_MAX / PITCH_MIN)


def quantize_pitch(period: float, correlation: float) -> int:
    """Log-uniform period index over [32, 256] and uniform correlation cell over [0, 1]."""

    period = min(max(float(period), PITCH_MIN), PITCH_MAX)
    period_index = int(round(_PERIOD_LEVELS * math.log(period / PITCH_MIN) / _LOG_SPAN))
    correlation_index = min(_CORRELATION_LEVELS - 1, max(0, int(math.floor(float(correlation) * _CORRELATION_LEVELS))))
    return (period_index << CORRELATION_BITS) | correlation_index


def dequantize_pitch(code: int) -> Tuple[int, float]:
    if not 0 <= code < (1 << PITCH_BITS):
        raise CorruptStreamError(f"pitch code {code} out of range")
    period_index = code >> CORRELATION_BITS
    correlation_index = code & (_CORRELATION_LEVELS - 1)
    period = PITCH_MIN * math.exp(_LOG_SPAN * period_index / _PERIOD_LEVELS)
    period = int(min(max(round(period), PITCH_MIN), PITCH_MAX))
    return period, (correlation_index + 0.5) / _CORRELATION_LEVELS


def packet_pitch_codes(stream: FeatureStream) -> np.ndarray:
    """One code per packet from the median period and mean correlation of its frames."""

    codes = []
    for start in range(0, len(stream), FRAMES_PER_PACKET):
        stop = start + FRAMES_PER_PACKET
        codes.append(
            quantize_pitch(
                float(np.median(stream.pitch_period[start:stop])),
                float(np.mean(stream.pitch_correlation[start:stop])),
            )
        )
    return np.asarray(codes, dtype=np.int64)


def expand_pitch_codes(codes: np.ndarray, frames: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-frame dequantized (period, correlation) arrays for ``frames`` frames."""

    periods = np.zeros(frames, dtype=np.int64)
    correlations = np.zeros(frames)
    for i, code in enumerate(codes):
        period, correlation = dequantize_pitch(int(code))
        periods[i * FRAMES_PER_PACKET : (i + 1) * FRAMES_PER_PACKET] = period
        correlations[i * FRAMES_PER_PACKET : (i + 1) * FRAMES_PER_PACKET] = correlation
    return periods, correlations


def conditioning_pitch(stream: FeatureStream) -> Tuple[np.ndarray, np.ndarray]:
    """The pitch the predictor sees on both codec sides: dequantized packet values."""

    return expand_pitch_codes(packet_pitch_codes(stream), len(stream))
