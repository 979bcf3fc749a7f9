import math

import numpy as np
import pytest

from app.core.errors import CorruptStreamError, InputError
from app.schemas.bitstream import CodedFrame
from app.schemas.features import NB_CEPSTRUM
from app.schemas.predictor import TrainConfig
from app.schemas.quantization import VECTOR_DIM, Codebook, CodebookSet, ProfileName, QuantizerRole
from app.services.pitch_service import dequantize_pitch, packet_pitch_codes, quantize_pitch
from app.services.predictor_service import OUTPUT_LIMIT
from app.services.quantization_service import (
    PREDICTION_LIMIT,
    PROFILE_TABLE,
    _gated_recursion,
    calibrate_profile,
    calibrate_threshold,
    dequantize_residual,
    draw_segments,
    generate_codebook_training_residuals,
    get_profile,
    kmeans_fit,
    kmeans_train,
    quantize_residual,
    snap,
    snap_prediction,
    train_codebooks,
)


def test_profile_lookup() -> None:
    assert get_profile("low").profile_id == 0
    assert get_profile(1).name == ProfileName.mid
    assert get_profile(ProfileName.high).always_large
    with pytest.raises(InputError):
        get_profile("ultra")
    with pytest.raises(InputError):
        get_profile(7)


def test_profile_layouts() -> None:
    low, mid, high = (PROFILE_TABLE[n] for n in ProfileName)
    assert list(low.role_bits()) == [QuantizerRole.SQ_L, QuantizerRole.VQ_L1, QuantizerRole.VQ_L2]
    assert mid.role_bits() == {
        QuantizerRole.SQ_L: 8,
        QuantizerRole.SQ_S: 4,
        QuantizerRole.VQ_L1: 10,
        QuantizerRole.VQ_L2: 10,
        QuantizerRole.VQ_S: 9,
    }
    assert high.transmits_flags is False and low.transmits_flags and mid.transmits_flags


def test_kmeans_exact_fit_when_n_equals_k() -> None:
    points = np.random.default_rng(0).normal(size=(8, 3))
    fit = kmeans_fit(points, 8, seed=1)
    assert fit.distortions[-1] == 0.0
    assert np.array_equal(np.sort(fit.centroids, axis=0), np.sort(points, axis=0))


def test_kmeans_single_centroid_is_mean() -> None:
    points = np.random.default_rng(1).normal(size=(50, 4))
    fit = kmeans_fit(points, 1)
    assert np.allclose(fit.centroids[0], points.mean(axis=0), atol=1e-12)


def test_kmeans_finds_separated_blobs() -> None:
    rng = np.random.default_rng(2)
    means = np.array([[5.0, 5.0], [-5.0, 5.0], [5.0, -5.0], [-5.0, -5.0]])
    blobs = [m + rng.normal(0.0, 0.3, size=(200, 2)) for m in means]
    fit = kmeans_fit(np.concatenate(blobs), 4, seed=3)
    for blob in blobs:
        gaps = np.linalg.norm(fit.centroids - blob.mean(axis=0), axis=1)
        assert gaps.min() < 0.1


def test_kmeans_distortion_never_increases() -> None:
    points = np.random.default_rng(4).normal(size=(400, 5))
    distortions = kmeans_fit(points, 16, max_iters=30, seed=5).distortions
    assert all(b <= a for a, b in zip(distortions, distortions[1:]))


def test_kmeans_needs_enough_points() -> None:
    with pytest.raises(InputError):
        kmeans_fit(np.zeros((3, 2)), 4)


def test_kmeans_train_snaps_centroids() -> None:
    book = kmeans_train(np.random.default_rng(6).normal(size=(64, 1)), 4, QuantizerRole.SQ_L)
    assert book.size == 4 and book.bits == 2
    assert np.array_equal(book.centroids, snap(book.centroids))


def test_threshold_quantile() -> None:
    assert calibrate_threshold([1, 2, 3, 4], 0.25) == 4
    assert calibrate_threshold([4, 1, 3, 2], 0.5) == 3
    assert calibrate_threshold([1, 2, 3], 1.0) == -math.inf


def test_threshold_exceedance_on_held_out_draw() -> None:
    rng = np.random.default_rng(7)
    theta = calibrate_threshold(rng.uniform(size=20000), 0.07)
    held_out = rng.uniform(size=20000)
    assert abs(np.mean(held_out >= theta) - 0.07) < 0.01


def test_threshold_errors() -> None:
    with pytest.raises(InputError):
        calibrate_threshold([], 0.5)
    with pytest.raises(InputError):
        calibrate_threshold([1.0], 0.0)


def test_stage_two_sees_zero_remainder(codebook_sets) -> None:
    books = codebook_sets[ProfileName.high]
    stage1 = books.codebooks[QuantizerRole.VQ_L1].centroids
    stage2 = books.codebooks[QuantizerRole.VQ_L2].centroids
    residual = np.concatenate([[0.1], stage1[17]])
    coded = quantize_residual(residual, books)
    assert coded.vq_indices == (17, int(np.argmin(np.sum(stage2 * stage2, axis=1))))
    assert coded.sq_flag == 1 and coded.vq_flag == 1


def test_low_profile_discards_small_residuals(codebook_sets) -> None:
    books = codebook_sets[ProfileName.low]
    residual = np.full(NB_CEPSTRUM, 0.01)
    coded = quantize_residual(residual, books)
    assert (coded.sq_flag, coded.vq_flag) == (0, 0)
    assert coded.sq_indices == () and coded.vq_indices == ()
    assert np.all(dequantize_residual(coded, books) == 0.0)


def test_mid_profile_small_scheme(codebook_sets) -> None:
    books = codebook_sets[ProfileName.mid]
    residual = np.full(NB_CEPSTRUM, 0.01)
    coded = quantize_residual(residual, books)
    assert (coded.sq_flag, coded.vq_flag) == (0, 0)
    assert len(coded.sq_indices) == 1 and len(coded.vq_indices) == 1
    r_bar = dequantize_residual(coded, books)
    assert r_bar[0] == books.codebooks[QuantizerRole.SQ_S].centroids[coded.sq_indices[0], 0]
    assert np.array_equal(r_bar[1:], books.codebooks[QuantizerRole.VQ_S].centroids[coded.vq_indices[0]])


def test_large_components_are_chosen_independently(codebook_sets) -> None:
    books = codebook_sets[ProfileName.low]
    residual = np.zeros(NB_CEPSTRUM)
    residual[0] = 0.9
    coded = quantize_residual(residual, books)
    assert (coded.sq_flag, coded.vq_flag) == (1, 0)
    assert len(coded.sq_indices) == 1 and coded.vq_indices == ()


def test_scalar_ties_go_to_lowest_index() -> None:
    profile = PROFILE_TABLE[ProfileName.high].model_copy(update={"sq_large_bits": 1, "vq_large_bits": [1]})
    books = CodebookSet(
        profile=profile,
        codebooks={
            QuantizerRole.SQ_L: Codebook(role=QuantizerRole.SQ_L, centroids=[-0.5, 0.5]),
            QuantizerRole.VQ_L1: Codebook(role=QuantizerRole.VQ_L1, centroids=np.zeros((2, VECTOR_DIM))),
        },
    )
    coded = quantize_residual(np.zeros(NB_CEPSTRUM), books)
    assert coded.sq_indices == (0,) and coded.vq_indices == (0,)


def test_two_stages_beat_one() -> None:
    rng = np.random.default_rng(8)
    train = rng.normal(0.0, 0.3, size=(3000, VECTOR_DIM))
    stage1 = kmeans_train(train, 16, QuantizerRole.VQ_L1, seed=1)
    labels = np.argmin(((train[:, None, :] - stage1.centroids[None]) ** 2).sum(axis=2), axis=1)
    stage2 = kmeans_train(train - stage1.centroids[labels], 16, QuantizerRole.VQ_L2, seed=2)
    sq = Codebook(role=QuantizerRole.SQ_L, centroids=snap(np.linspace(-1, 1, 4)))
    high = PROFILE_TABLE[ProfileName.high]
    two = CodebookSet(
        profile=high.model_copy(update={"sq_large_bits": 2, "vq_large_bits": [4, 4]}),
        codebooks={QuantizerRole.SQ_L: sq, QuantizerRole.VQ_L1: stage1, QuantizerRole.VQ_L2: stage2},
    )
    one = CodebookSet(
        profile=high.model_copy(update={"sq_large_bits": 2, "vq_large_bits": [4]}),
        codebooks={QuantizerRole.SQ_L: sq, QuantizerRole.VQ_L1: stage1},
    )
    errors_two, errors_one = [], []
    for residual in np.column_stack([np.zeros(1000), rng.normal(0.0, 0.3, size=(1000, VECTOR_DIM))]):
        errors_two.append(np.sum((dequantize_residual(quantize_residual(residual, two), two) - residual) ** 2))
        errors_one.append(np.sum((dequantize_residual(quantize_residual(residual, one), one) - residual) ** 2))
    assert np.mean(errors_two) < np.mean(errors_one)


def test_dequantize_rejects_bad_indices(codebook_sets) -> None:
    high = codebook_sets[ProfileName.high]
    with pytest.raises(CorruptStreamError):
        dequantize_residual(CodedFrame(sq_flag=1, vq_flag=1, sq_indices=(0,), vq_indices=(0, 5000)), high)
    with pytest.raises(CorruptStreamError):
        dequantize_residual(CodedFrame(sq_flag=0, vq_flag=1, vq_indices=(0, 0)), high)
    with pytest.raises(CorruptStreamError):
        dequantize_residual(CodedFrame(sq_flag=1, vq_flag=0, sq_indices=(0,), vq_indices=(3,)), codebook_sets[ProfileName.low])


def test_quantize_is_deterministic(codebook_sets) -> None:
    books = codebook_sets[ProfileName.mid]
    residual = np.random.default_rng(9).normal(0.0, 0.3, NB_CEPSTRUM)
    assert quantize_residual(residual, books) == quantize_residual(residual, books)


def _fixed_point_codebooks(profile_name: ProfileName, seed: int) -> CodebookSet:
    """Large centroids clear the thresholds, small ones stay under them, and stage 2
    is far finer than the stage-1 spacing."""

    rng = np.random.default_rng(seed)
    profile = PROFILE_TABLE[profile_name]
    if not profile.always_large:
        profile = profile.with_thresholds(0.3, 1.0)

    def centroids(role: QuantizerRole, size: int) -> np.ndarray:
        if role == QuantizerRole.SQ_L:
            return (rng.choice([-1.0, 1.0], size) * rng.uniform(0.4, 1.0, size))[:, None]
        if role == QuantizerRole.SQ_S:
            return rng.uniform(-0.25, 0.25, (size, 1))
        spread = {QuantizerRole.VQ_L1: 0.5, QuantizerRole.VQ_L2: 0.005, QuantizerRole.VQ_S: 0.02}[role]
        return rng.normal(0.0, spread, (size, VECTOR_DIM))

    books = {
        role: Codebook(role=role, centroids=snap(centroids(role, 1 << bits)))
        for role, bits in profile.role_bits().items()
    }
    return CodebookSet(profile=profile, codebooks=books)


@pytest.mark.parametrize("profile", list(ProfileName))
def test_dequantized_residuals_are_fixed_points(profile: ProfileName) -> None:
    books = _fixed_point_codebooks(profile, seed=30)
    if QuantizerRole.VQ_L2 in books.codebooks:
        stage1 = books.codebooks[QuantizerRole.VQ_L1].centroids
        stage2 = books.codebooks[QuantizerRole.VQ_L2].centroids
        norms = np.sum(stage1 * stage1, axis=1)
        gaps = norms[:, None] + norms[None, :] - 2.0 * stage1 @ stage1.T
        np.fill_diagonal(gaps, np.inf)
        assert np.sqrt(gaps.min()) > 2.0 * np.linalg.norm(stage2, axis=1).max()

    rng = np.random.default_rng(31)
    for _ in range(200):
        residual = rng.normal(0.0, rng.uniform(0.01, 0.5), NB_CEPSTRUM)
        once = dequantize_residual(quantize_residual(residual, books), books)
        twice = dequantize_residual(quantize_residual(once, books), books)
        assert np.array_equal(twice, once)


def test_snapped_predictions_stay_inside_unit_interval() -> None:
    edge = np.array([OUTPUT_LIMIT, -OUTPUT_LIMIT, 0.25])
    assert snap(edge)[0] == 1.0
    snapped = snap_prediction(edge)
    assert snapped.tolist() == [PREDICTION_LIMIT, -PREDICTION_LIMIT, 0.25]
    assert np.all(np.abs(snapped) < 1.0)


def test_pitch_code_boundaries() -> None:
    assert quantize_pitch(32, 0.0) >> 4 == 0
    assert quantize_pitch(256, 0.0) >> 4 == 127
    assert quantize_pitch(100, 1.0) & 15 == 15
    assert dequantize_pitch(quantize_pitch(100, 1.0))[1] == 0.96875


def test_pitch_roundtrip_within_one_cell() -> None:
    cell = (256 / 32) ** (1 / 127)
    for period in range(32, 257):
        decoded, _ = dequantize_pitch(quantize_pitch(period, 0.5))
        assert decoded / period <= cell * 1.01 and period / decoded <= cell * 1.01


def test_pitch_code_out_of_range() -> None:
    with pytest.raises(CorruptStreamError):
        dequantize_pitch(1 << 11)


def test_packet_codes_use_median_and_mean(corpus) -> None:
    stream = corpus[0].slice(0, 6)
    codes = packet_pitch_codes(stream)
    assert codes.shape == (2,)
    assert codes[0] == quantize_pitch(float(np.median(stream.pitch_period[:4])), float(np.mean(stream.pitch_correlation[:4])))


def test_segments_are_capped_at_stream_length(corpus) -> None:
    segments = draw_segments(corpus, 2.0, np.random.default_rng(0))
    assert [len(s) for s in segments] == [len(s) for s in corpus]


def test_high_profile_collects_every_residual(corpus, weights) -> None:
    sets = generate_codebook_training_residuals(corpus, weights, PROFILE_TABLE[ProfileName.high])
    total = sum(len(s) for s in corpus)
    assert sets.sq_large.shape == (total, 1)
    assert sets.vq_large.shape == (total, VECTOR_DIM)
    assert sets.sq_small.shape[0] == 0 and sets.vq_small.shape[0] == 0


def test_thresholds_split_residuals(corpus, weights) -> None:
    profile = PROFILE_TABLE[ProfileName.low].with_thresholds(0.2, 3.0)
    sets = generate_codebook_training_residuals(corpus, weights, profile)
    total = sum(len(s) for s in corpus)
    assert sets.sq_large.shape[0] + sets.sq_small.shape[0] == total
    assert np.all(np.abs(sets.sq_large) >= 0.2)
    assert np.all(np.abs(sets.sq_small) < 0.2)
    assert np.all(np.sum(np.abs(sets.vq_large), axis=1) >= 3.0)


def test_train_small_codebooks(corpus, weights) -> None:
    profile = PROFILE_TABLE[ProfileName.low].model_copy(update={"sq_large_bits": 2, "vq_large_bits": [3, 3]})
    config = TrainConfig(seed=4, kmeans_max_iters=10, segment_seconds=2.0)
    books = train_codebooks(corpus, weights, profile, config)
    assert books.codebooks[QuantizerRole.SQ_L].size == 4
    assert books.codebooks[QuantizerRole.VQ_L2].size == 8
    assert math.isfinite(books.profile.theta_sq) and math.isfinite(books.profile.theta_vq)
    assert 0.0 < books.measured_ql_fraction_sq <= 1.0


@pytest.mark.parametrize("rounds", [0, 2])
def test_profile_calibration_hits_target_on_its_calibration_set(corpus, weights, rounds: int) -> None:
    low = PROFILE_TABLE[ProfileName.low]
    before = calibrate_profile(corpus, weights, low, rounds=rounds - 1) if rounds else None
    calibrated = calibrate_profile(corpus, weights, low, rounds=rounds)
    if before is None:
        trace = _gated_recursion(corpus, weights, -math.inf, -math.inf)
    else:
        trace = _gated_recursion(corpus, weights, before.theta_sq, before.theta_vq)
    n = trace.r0.size
    assert abs(np.mean(np.abs(trace.r0) >= calibrated.theta_sq) - 0.25) <= 1.0 / n
    assert abs(np.mean(np.sum(np.abs(trace.r_vec), axis=1) >= calibrated.theta_vq) - 0.25) <= 1.0 / n


def test_high_profile_needs_no_calibration(corpus, weights) -> None:
    high = calibrate_profile(corpus, weights, PROFILE_TABLE[ProfileName.high], rounds=3)
    assert high.theta_sq == high.theta_vq == -math.inf
