"""Discriminative residual quantization and k-means codebook training.

r_0 and r_{1:17} are coded independently: the L1 norm of each component is
compared with its profile threshold and the component goes to the large scheme
(Q_L), the small scheme (Q_S) or is dropped (DISCARD, dequantizes to zero).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import CorruptStreamError, InputError, NumericError
from app.schemas.bitstream import CodedFrame
from app.schemas.features import FRAME_RATE, NB_CEPSTRUM, FeatureStream
from app.schemas.predictor import PredictorState, PredictorWeights, TrainConfig
from app.schemas.quantization import (
    VECTOR_DIM,
    BitrateProfile,
    Codebook,
    CodebookSet,
    ProfileName,
    QuantizerRole,
    ResidualSets,
    ResidualSplit,
)
from app.services.pitch_service import conditioning_pitch
from app.services.predictor_service import predict_step, scale_cepstrum, scale_pitch

logger = logging.getLogger(__name__)

# Residual arithmetic runs on this fixed-point grid so that sums and differences
# of scaled features, predictions and centroids are exact in float64.
GRID_BITS = 22
GRID = 2.0**-GRID_BITS
# Largest grid value strictly inside the unit interval.
PREDICTION_LIMIT = 1.0 - GRID

KMEANS_TOLERANCE = 1e-6
_ASSIGN_CHUNK = 256

PROFILE_TABLE: Dict[ProfileName, BitrateProfile] = {
    ProfileName.low: BitrateProfile(
        name=ProfileName.low,
        profile_id=0,
        ql_fraction_sq=0.25,
        ql_fraction_vq=0.25,
        published_bits={QuantizerRole.SQ_L: 7.0, QuantizerRole.VQ_L1: 9.8, QuantizerRole.VQ_L2: 9.9},
    ),
    ProfileName.mid: BitrateProfile(
        name=ProfileName.mid,
        profile_id=1,
        ql_fraction_sq=0.07,
        ql_fraction_vq=0.07,
        sq_small_bits=4,
        vq_small_bits=[9],
        published_bits={
            QuantizerRole.SQ_L: 7.4,
            QuantizerRole.SQ_S: 2.9,
            QuantizerRole.VQ_L1: 9.2,
            QuantizerRole.VQ_L2: 9.4,
            QuantizerRole.VQ_S: 8.0,
        },
    ),
    ProfileName.high: BitrateProfile(
        name=ProfileName.high,
        profile_id=2,
        ql_fraction_sq=1.0,
        ql_fraction_vq=1.0,
        published_bits={QuantizerRole.SQ_L: 7.2, QuantizerRole.VQ_L1: 9.2, QuantizerRole.VQ_L2: 9.6},
    ),
}


def get_profile(name) -> BitrateProfile:
    """Look a profile up by name (``low``/``mid``/``high``) or numeric id."""

    if isinstance(name, int) and not isinstance(name, bool):
        for profile in PROFILE_TABLE.values():
            if profile.profile_id == name:
                return profile
        raise InputError(f"unknown profile id {name}")
    try:
        return PROFILE_TABLE[ProfileName(str(getattr(name, "value", name)))]
    except ValueError:
        raise InputError(f"unknown profile {name!r}; expected one of low, mid, high")


def snap(values) -> np.ndarray:
    """Round onto the residual grid."""

    return np.round(np.asarray(values, dtype=np.float64) * (1 << GRID_BITS)) * GRID


def snap_prediction(values) -> np.ndarray:
    """Snap a predictor output, keeping it strictly inside (-1, 1)."""

    return np.clip(snap(values), -PREDICTION_LIMIT, PREDICTION_LIMIT)


# k-means


@dataclass
class KMeansFit:
    centroids: np.ndarray
    distortions: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.distortions)


def nearest(vectors: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest centroid; ties go to the lowest index."""

    vectors = np.atleast_2d(vectors)
    labels = np.empty(vectors.shape[0], dtype=np.int64)
    dists = np.empty(vectors.shape[0])
    for s in range(0, vectors.shape[0], _ASSIGN_CHUNK):
        diff = vectors[s : s + _ASSIGN_CHUNK, None, :] - centroids[None, :, :]
        d = np.sum(diff * diff, axis=2)
        labels[s : s + _ASSIGN_CHUNK] = np.argmin(d, axis=1)
        dists[s : s + _ASSIGN_CHUNK] = d[np.arange(d.shape[0]), labels[s : s + _ASSIGN_CHUNK]]
    return labels, dists


def _kmeans_plus_plus(vectors: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((vectors - vectors[chosen[0]]) ** 2, axis=1)
    for _ in range(1, size):
        total = float(d2.sum())
        if total > 0.0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            pick = int(rng.choice(remaining))
        chosen.append(pick)
        d2 = np.minimum(d2, np.sum((vectors - vectors[pick]) ** 2, axis=1))
    return vectors[chosen].copy()


def kmeans_fit(vectors, size: int, max_iters: int = 25, seed: int = 0) -> KMeansFit:
    """Lloyd's algorithm with k-means++ seeding.

    Distortion is the mean squared distance to the nearest centroid and is
    checked to be non-increasing after every iteration.
    """

    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    n = vectors.shape[0]
    if n < size:
        raise InputError(f"k-means needs at least {size} vectors, got {n}")
    if size < 1:
        raise InputError("codebook size must be positive")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(vectors, size, rng)
    distortions: List[float] = []
    for iteration in range(max_iters):
        labels, dists = nearest(vectors, centroids)
        distortion = float(dists.mean())
        if distortions and distortion > distortions[-1] * (1.0 + 1e-9) + 1e-15:
            raise NumericError(
                f"k-means distortion increased at iteration {iteration}: {distortions[-1]:.6e} -> {distortion:.6e}"
            )
        distortions.append(distortion)
        logger.debug("k-means K=%d iteration %d distortion %.6e", size, iteration, distortion)

        counts = np.bincount(labels, minlength=size)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, vectors)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]

        empty = np.flatnonzero(~occupied)
        if empty.size:
            # Move each empty centroid onto the point currently worst served.
            _, far = nearest(vectors, centroids)
            for k, idx in zip(empty, np.argsort(-far, kind="stable")[: empty.size]):
                centroids[k] = vectors[idx]
            logger.warning("k-means K=%d re-seeded %d empty clusters", size, empty.size)

        if distortion == 0.0:
            break
        if len(distortions) > 1 and (distortions[-2] - distortion) / distortions[-2] < KMEANS_TOLERANCE:
            break
    return KMeansFit(centroids=centroids, distortions=distortions)


def kmeans_train(vectors, size: int, role: QuantizerRole, max_iters: int = 25, seed: int = 0) -> Codebook:
    fit = kmeans_fit(vectors, size, max_iters=max_iters, seed=seed)
    logger.info(
        "Trained %s codebook: K=%d from %d vectors, distortion %.6e after %d iterations",
        role.value,
        size,
        np.asarray(vectors).shape[0],
        fit.distortions[-1],
        fit.iterations,
    )
    return Codebook(role=role, centroids=snap(fit.centroids))


# Thresholds


def calibrate_threshold(residual_norms: Sequence[float], target_fraction: float) -> float:
    """Smallest norm among the top ``target_fraction`` of the calibration set.

    A fraction of 1 means every residual is coded with Q_L and gives -inf.
    """

    norms = np.sort(np.asarray(residual_norms, dtype=np.float64).reshape(-1))
    if norms.size == 0:
        raise InputError("cannot calibrate a threshold on an empty set")
    if not 0.0 < target_fraction <= 1.0:
        raise InputError(f"target fraction must lie in (0, 1], got {target_fraction}")
    if target_fraction >= 1.0:
        return -math.inf
    count = max(1, int(round(target_fraction * norms.size)))
    return float(norms[norms.size - count])


# Quantize / dequantize


def _scalar_index(value: float, codebook: Codebook) -> int:
    return int(np.argmin(np.abs(codebook.centroids[:, 0] - value)))


def _vector_index(vector: np.ndarray, codebook: Codebook) -> int:
    diff = codebook.centroids - vector
    return int(np.argmin(np.sum(diff * diff, axis=1)))


def _centroid(codebook: Codebook, index: int) -> np.ndarray:
    if not 0 <= index < codebook.size:
        raise CorruptStreamError(f"{codebook.role.value} index {index} out of range for K={codebook.size}")
    return codebook.centroids[index]


def large_flags(split: ResidualSplit, profile: BitrateProfile) -> Tuple[int, int]:
    """Encoder-side Q_L decision per component from the unquantized L1 norms."""

    if profile.always_large:
        return 1, 1
    sq_flag = int(abs(split.r0) >= profile.theta_sq)
    vq_flag = int(float(np.sum(np.abs(split.r_vec))) >= profile.theta_vq)
    return sq_flag, vq_flag


def quantize_residual(residual: np.ndarray, codebooks: CodebookSet) -> CodedFrame:
    """Flags and codeword indices for an 18-dim scaled residual."""

    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != (NB_CEPSTRUM,):
        raise InputError(f"residual must have {NB_CEPSTRUM} entries")
    profile, books = codebooks.profile, codebooks.codebooks
    split = ResidualSplit.of(residual)
    sq_flag, vq_flag = large_flags(split, profile)

    if sq_flag:
        sq_indices = (_scalar_index(split.r0, books[QuantizerRole.SQ_L]),)
    elif QuantizerRole.SQ_S in books:
        sq_indices = (_scalar_index(split.r0, books[QuantizerRole.SQ_S]),)
    else:
        sq_indices = ()

    if vq_flag:
        first = _vector_index(split.r_vec, books[QuantizerRole.VQ_L1])
        vq_indices = (first,)
        if QuantizerRole.VQ_L2 in books:
            remainder = split.r_vec - books[QuantizerRole.VQ_L1].centroids[first]
            vq_indices = (first, _vector_index(remainder, books[QuantizerRole.VQ_L2]))
    elif QuantizerRole.VQ_S in books:
        vq_indices = (_vector_index(split.r_vec, books[QuantizerRole.VQ_S]),)
    else:
        vq_indices = ()

    return CodedFrame(sq_flag=sq_flag, vq_flag=vq_flag, sq_indices=sq_indices, vq_indices=vq_indices)


def frame_roles(sq_flag: int, vq_flag: int, codebooks: CodebookSet) -> Tuple[Tuple[QuantizerRole, ...], Tuple[QuantizerRole, ...]]:
    """Quantizer roles whose indices a frame with these flags carries, in wire order."""

    books = codebooks.codebooks
    if sq_flag:
        sq_roles: Tuple[QuantizerRole, ...] = (QuantizerRole.SQ_L,)
    else:
        sq_roles = (QuantizerRole.SQ_S,) if QuantizerRole.SQ_S in books else ()
    if vq_flag:
        vq_roles = tuple(r for r in (QuantizerRole.VQ_L1, QuantizerRole.VQ_L2) if r in books)
    else:
        vq_roles = (QuantizerRole.VQ_S,) if QuantizerRole.VQ_S in books else ()
    return sq_roles, vq_roles


def dequantize_residual(coded: CodedFrame, codebooks: CodebookSet) -> np.ndarray:
    """r_bar for one frame; DISCARDed components come back as zeros."""

    books = codebooks.codebooks
    if codebooks.profile.always_large and not (coded.sq_flag and coded.vq_flag):
        raise CorruptStreamError("this profile codes every component with Q_L")
    sq_roles, vq_roles = frame_roles(coded.sq_flag, coded.vq_flag, codebooks)
    if len(coded.sq_indices) != len(sq_roles) or len(coded.vq_indices) != len(vq_roles):
        raise CorruptStreamError("codeword indices do not match the frame flags")

    r0 = 0.0
    for role, index in zip(sq_roles, coded.sq_indices):
        r0 += float(_centroid(books[role], index)[0])
    r_vec = np.zeros(VECTOR_DIM)
    for role, index in zip(vq_roles, coded.vq_indices):
        r_vec = r_vec + _centroid(books[role], index)
    return ResidualSplit(r0, r_vec).join()


# Residual generation for codebook training


def draw_segments(
    corpus: Sequence[FeatureStream], seconds: float, rng: np.random.Generator, per_utterance: int = 1
) -> List[FeatureStream]:
    """Random fixed-length segments, capped at the utterance length."""

    length = max(1, int(round(seconds * FRAME_RATE)))
    segments = []
    for stream in corpus:
        if not len(stream):
            continue
        span = min(length, len(stream))
        for _ in range(per_utterance):
            start = int(rng.integers(0, len(stream) - span + 1))
            segments.append(stream.slice(start, start + span))
    return segments


@dataclass
class _ResidualTrace:
    r0: np.ndarray
    r_vec: np.ndarray
    sq_large: np.ndarray
    vq_large: np.ndarray


def _gated_recursion(
    segments: Sequence[FeatureStream], weights: PredictorWeights, theta_sq: float, theta_vq: float
) -> _ResidualTrace:
    """Run the encoder recursion with unquantized residuals added back only above threshold.

    Segments run as one batch; each is its own stream with its own packet pitch.
    """

    segments = [s for s in segments if len(s)]
    if not segments:
        raise InputError("no frames to generate residuals from")
    batch = len(segments)
    steps = max(len(s) for s in segments)
    targets = np.zeros((steps, batch, NB_CEPSTRUM))
    pitch = np.zeros((steps, batch, 2))
    valid = np.zeros((steps, batch), dtype=bool)
    for b, segment in enumerate(segments):
        n = len(segment)
        targets[:n, b] = snap(scale_cepstrum(segment.cepstrum, weights.scaler))
        period, correlation = conditioning_pitch(segment)
        pitch[:n, b] = scale_pitch(period, correlation, weights.scaler)
        valid[:n, b] = True

    state = PredictorState.zeros(weights, batch)
    prev = np.zeros((batch, NB_CEPSTRUM))
    r0s, vecs, sq_large, vq_large = [], [], [], []
    for t in range(steps):
        prediction, state = predict_step(weights, state, prev, pitch[t])
        prediction = snap_prediction(prediction)
        residual = targets[t] - prediction
        above_sq = np.abs(residual[:, 0]) >= theta_sq
        above_vq = np.sum(np.abs(residual[:, 1:]), axis=1) >= theta_vq
        gate = np.column_stack([above_sq, np.repeat(above_vq[:, None], VECTOR_DIM, axis=1)])
        prev = prediction + np.where(gate, residual, 0.0)
        live = valid[t]
        r0s.append(residual[live, 0])
        vecs.append(residual[live, 1:])
        sq_large.append(above_sq[live])
        vq_large.append(above_vq[live])
    return _ResidualTrace(
        r0=np.concatenate(r0s),
        r_vec=np.concatenate(vecs),
        sq_large=np.concatenate(sq_large),
        vq_large=np.concatenate(vq_large),
    )


def generate_codebook_training_residuals(
    segments: Sequence[FeatureStream], weights: PredictorWeights, profile: BitrateProfile
) -> ResidualSets:
    """Residuals split into Q_L and Q_S training sets per component."""

    trace = _gated_recursion(segments, weights, profile.theta_sq, profile.theta_vq)
    return ResidualSets(
        sq_large=trace.r0[trace.sq_large][:, None],
        sq_small=trace.r0[~trace.sq_large][:, None],
        vq_large=trace.r_vec[trace.vq_large],
        vq_small=trace.r_vec[~trace.vq_large],
    )


def calibrate_profile(
    corpus: Sequence[FeatureStream], weights: PredictorWeights, profile: BitrateProfile, rounds: int = 0
) -> BitrateProfile:
    """Thresholds from a teacher-forced first pass over the whole corpus.

    Each of ``rounds`` further passes re-runs the gated recursion with the
    current thresholds and takes the quantiles again, so that the Q_L share
    under the codec's own feedback approaches the target.
    """

    if profile.always_large:
        return profile.with_thresholds(-math.inf, -math.inf)
    theta_sq = theta_vq = -math.inf
    for _ in range(rounds + 1):
        trace = _gated_recursion(corpus, weights, theta_sq, theta_vq)
        theta_sq = calibrate_threshold(np.abs(trace.r0), profile.ql_fraction_sq)
        theta_vq = calibrate_threshold(np.sum(np.abs(trace.r_vec), axis=1), profile.ql_fraction_vq)
        logger.info(
            "Calibrated %s thresholds on %d frames: theta_sq=%.6f theta_vq=%.6f",
            profile.name.value,
            trace.r0.size,
            theta_sq,
            theta_vq,
        )
    return profile.with_thresholds(theta_sq, theta_vq)


def _enough(sets: ResidualSets, profile: BitrateProfile) -> bool:
    bits = profile.role_bits()
    needed = [
        (sets.sq_large, bits[QuantizerRole.SQ_L]),
        (sets.vq_large, bits[QuantizerRole.VQ_L1]),
    ]
    if QuantizerRole.SQ_S in bits:
        needed.append((sets.sq_small, bits[QuantizerRole.SQ_S]))
    if QuantizerRole.VQ_S in bits:
        needed.append((sets.vq_small, bits[QuantizerRole.VQ_S]))
    return all(arr.shape[0] >= (1 << b) for arr, b in needed)


def _merge(a: Optional[ResidualSets], b: ResidualSets) -> ResidualSets:
    if a is None:
        return b
    return ResidualSets(
        sq_large=np.concatenate([a.sq_large, b.sq_large]),
        sq_small=np.concatenate([a.sq_small, b.sq_small]),
        vq_large=np.concatenate([a.vq_large, b.vq_large]),
        vq_small=np.concatenate([a.vq_small, b.vq_small]),
    )


def collect_training_residuals(
    corpus: Sequence[FeatureStream], weights: PredictorWeights, profile: BitrateProfile, config: TrainConfig
) -> ResidualSets:
    """One random segment per utterance, plus more while a codebook would have fewer vectors than entries."""

    rng = np.random.default_rng(config.seed)
    sets: Optional[ResidualSets] = None
    for rounds in range(1, config.max_segments_per_utterance + 1):
        segments = draw_segments(corpus, config.segment_seconds, rng)
        sets = _merge(sets, generate_codebook_training_residuals(segments, weights, profile))
        if _enough(sets, profile):
            break
        if rounds < config.max_segments_per_utterance:
            logger.warning(
                "Too few residuals for %s codebooks after %d segment(s) per utterance; drawing more",
                profile.name.value,
                rounds,
            )
    if sets is None or not _enough(sets, profile):
        raise InputError(
            f"corpus too small for {profile.name.value} codebooks even with "
            f"{config.max_segments_per_utterance} segments per utterance"
        )
    return sets


def train_codebooks(
    corpus: Sequence[FeatureStream], weights: PredictorWeights, profile: BitrateProfile, config: TrainConfig
) -> CodebookSet:
    """Calibrate thresholds, generate residuals and fit every codebook the profile uses."""

    profile = calibrate_profile(corpus, weights, profile, rounds=config.calibration_rounds)
    sets = collect_training_residuals(corpus, weights, profile, config)
    bits = profile.role_bits()
    iters, seed = config.kmeans_max_iters, config.seed

    books: Dict[QuantizerRole, Codebook] = {}
    books[QuantizerRole.SQ_L] = kmeans_train(sets.sq_large, 1 << bits[QuantizerRole.SQ_L], QuantizerRole.SQ_L, iters, seed)
    stage1 = kmeans_train(sets.vq_large, 1 << bits[QuantizerRole.VQ_L1], QuantizerRole.VQ_L1, iters, seed + 1)
    books[QuantizerRole.VQ_L1] = stage1
    if QuantizerRole.VQ_L2 in bits:
        labels, _ = nearest(sets.vq_large, stage1.centroids)
        remainder = sets.vq_large - stage1.centroids[labels]
        books[QuantizerRole.VQ_L2] = kmeans_train(
            remainder, 1 << bits[QuantizerRole.VQ_L2], QuantizerRole.VQ_L2, iters, seed + 2
        )
    if QuantizerRole.SQ_S in bits:
        books[QuantizerRole.SQ_S] = kmeans_train(
            sets.sq_small, 1 << bits[QuantizerRole.SQ_S], QuantizerRole.SQ_S, iters, seed + 3
        )
    if QuantizerRole.VQ_S in bits:
        books[QuantizerRole.VQ_S] = kmeans_train(
            sets.vq_small, 1 << bits[QuantizerRole.VQ_S], QuantizerRole.VQ_S, iters, seed + 4
        )
    total = sets.sq_large.shape[0] + sets.sq_small.shape[0]
    return CodebookSet(
        profile=profile,
        codebooks=books,
        measured_ql_fraction_sq=sets.sq_large.shape[0] / total,
        measured_ql_fraction_vq=sets.vq_large.shape[0] / total,
    )
