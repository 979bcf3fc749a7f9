"""Codeword statistics and bitrate accounting."""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.core.errors import InputError
from app.schemas.bitstream import Bitstream, CodedFrame
from app.schemas.features import FRAME_RATE, FeatureStream
from app.schemas.predictor import PredictorWeights
from app.schemas.quantization import BitrateProfile, CodebookSet, QuantizerRole
from app.schemas.reports import BitsPerFrame, QuantizerReport, RateReport
from app.services.huffman_service import average_length, build_huffman
from app.services.pitch_service import PITCH_BITRATE
from app.services.quantization_service import draw_segments, frame_roles
from app.services.residual_service import encode_frames

logger = logging.getLogger(__name__)

FLAG_BITS_PER_FRAME = 2


@dataclass
class FrequencyEstimate:
    """Smoothed symbol counts per quantizer plus the Q_L shares seen while coding."""

    counts: Dict[QuantizerRole, np.ndarray] = field(default_factory=dict)
    ql_fraction_sq: float = 1.0
    ql_fraction_vq: float = 1.0
    frames: int = 0

    def frequencies(self) -> Dict[QuantizerRole, np.ndarray]:
        return {role: normalize_counts(c) for role, c in self.counts.items()}


def normalize_counts(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise InputError("cannot normalize an all-zero count table")
    return counts / total


def tally_frequencies(frames: Iterable[CodedFrame], codebooks: CodebookSet) -> FrequencyEstimate:
    """Count indices per role; symbols never seen get a count of 1."""

    raw = {role: np.zeros(book.size, dtype=np.int64) for role, book in codebooks.codebooks.items()}
    total = sq_large = vq_large = 0
    for frame in frames:
        total += 1
        sq_large += frame.sq_flag
        vq_large += frame.vq_flag
        sq_roles, vq_roles = frame_roles(frame.sq_flag, frame.vq_flag, codebooks)
        for role, index in zip(sq_roles + vq_roles, frame.sq_indices + frame.vq_indices):
            raw[role][index] += 1
    counts = {role: np.where(c == 0, 1, c) for role, c in raw.items()}
    return FrequencyEstimate(
        counts=counts,
        ql_fraction_sq=sq_large / total if total else 1.0,
        ql_fraction_vq=vq_large / total if total else 1.0,
        frames=total,
    )


def estimate_frequencies(
    corpus: Sequence[FeatureStream],
    codebooks: CodebookSet,
    weights: PredictorWeights,
    seed: int = 0,
    segment_seconds: float = 2.0,
) -> FrequencyEstimate:
    """Run the full encoder on one random segment per utterance and tally its codewords."""

    rng = np.random.default_rng(seed)
    coded: List[CodedFrame] = []
    for segment in draw_segments(corpus, segment_seconds, rng):
        frames, _ = encode_frames(segment, codebooks, weights)
        coded.extend(frames)
    if not coded:
        raise InputError("no frames to estimate codeword frequencies from")
    estimate = tally_frequencies(coded, codebooks)
    logger.info(
        "Estimated %s codeword frequencies on %d frames: Q_L fractions sq=%.3f vq=%.3f",
        codebooks.profile.name.value,
        estimate.frames,
        estimate.ql_fraction_sq,
        estimate.ql_fraction_vq,
    )
    return estimate


def bits_per_frame(p: Sequence[float]) -> BitsPerFrame:
    """Entropy -sum p log2 p and the average length of the Huffman code built on p."""

    p = normalize_counts(p)
    nonzero = p[p > 0]
    entropy = float(-np.sum(nonzero * np.log2(nonzero)))
    huffman_avg = average_length(p, build_huffman(p))
    return BitsPerFrame(entropy=max(entropy, 0.0), huffman_avg=huffman_avg)


def quantizer_reports(codebooks: CodebookSet) -> List[QuantizerReport]:
    reports = []
    for role, bits in codebooks.profile.role_bits().items():
        counts = codebooks.counts.get(role)
        stats = bits_per_frame(counts if counts is not None else np.ones(1 << bits))
        reports.append(
            QuantizerReport(
                role=role,
                codebook_bits=bits,
                entropy_bits=stats.entropy,
                huffman_bits=stats.huffman_avg,
                published_bits=codebooks.profile.published_bits.get(role),
            )
        )
    return reports


def _exact(x: float) -> Fraction:
    return Fraction(str(x))


def rate_report(
    profile: BitrateProfile,
    bits: Optional[Dict[QuantizerRole, float]] = None,
    ql_fraction_sq: Optional[float] = None,
    ql_fraction_vq: Optional[float] = None,
) -> RateReport:
    """frame_rate * sum(fraction * bits per frame) over components, plus pitch.

    ``bits`` defaults to the profile's published values and the fractions to its
    Q_L targets. A Q_S scheme covers the whole complement of its Q_L fraction.
    Arithmetic is exact on the decimal values given.
    """

    bits = dict(profile.published_bits if bits is None else bits)
    f_sq = _exact(profile.ql_fraction_sq if ql_fraction_sq is None else ql_fraction_sq)
    f_vq = _exact(profile.ql_fraction_vq if ql_fraction_vq is None else ql_fraction_vq)
    layout = profile.role_bits()
    missing = [role.value for role in layout if role not in bits]
    if missing:
        raise InputError(f"bits per frame missing for {', '.join(missing)}")

    def b(role: QuantizerRole) -> Fraction:
        return _exact(bits[role]) if role in layout else Fraction(0)

    per_frame = f_sq * b(QuantizerRole.SQ_L) + (1 - f_sq) * b(QuantizerRole.SQ_S)
    per_frame += f_vq * (b(QuantizerRole.VQ_L1) + b(QuantizerRole.VQ_L2)) + (1 - f_vq) * b(QuantizerRole.VQ_S)
    bitrate = FRAME_RATE * per_frame + PITCH_BITRATE
    flag_rate = FRAME_RATE * FLAG_BITS_PER_FRAME if profile.transmits_flags else 0
    return RateReport(
        profile=profile.name,
        bitrate=float(bitrate),
        bitrate_with_flags=float(bitrate + flag_rate),
        pitch_bitrate=float(PITCH_BITRATE),
        flag_bitrate=float(flag_rate),
        ql_fraction_sq=float(f_sq),
        ql_fraction_vq=float(f_vq),
        bits={role: float(bits[role]) for role in layout},
    )


def measured_rate_report(codebooks: CodebookSet) -> RateReport:
    """Rate predicted from this codebook set's Huffman averages and measured Q_L fractions."""

    bits = {q.role: q.huffman_bits for q in quantizer_reports(codebooks)}
    return rate_report(
        codebooks.profile,
        bits,
        codebooks.measured_ql_fraction_sq,
        codebooks.measured_ql_fraction_vq,
    )


def measured_bitrate(bitstreams: Sequence[Bitstream]) -> float:
    """Payload bits per second over a set of streams, header excluded."""

    frames = sum(b.header.frame_count for b in bitstreams)
    if frames == 0:
        raise InputError("no frames to measure a bitrate on")
    return sum(b.payload_bits for b in bitstreams) * FRAME_RATE / frames
