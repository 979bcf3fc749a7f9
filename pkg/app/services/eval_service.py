"""Codec evaluation: bitrate, feature-domain distortion, Q_L shares, drift during discarded runs."""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import EmptyStreamError, NumericError
from app.schemas.bundle import CodecBundle
from app.schemas.features import FeatureStream
from app.schemas.quantization import ProfileName
from app.schemas.reports import DistortionStats, EvalReport
from app.services.entropy_service import measured_bitrate, quantizer_reports, rate_report
from app.services.residual_service import EncodedStream, decode_stream, encode_stream

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("r0_l1", "rvec_l1", "sq_flag", "vq_flag")


@dataclass
class UtteranceResult:
    name: str
    encoded: EncodedStream
    sq_flags: np.ndarray
    vq_flags: np.ndarray
    discarded: np.ndarray


def _run_utterance(stream: FeatureStream, bundle: CodecBundle, profile: ProfileName) -> UtteranceResult:
    codebooks = bundle.for_profile(profile)
    encoded = encode_stream(stream, codebooks, bundle.weights, bundle.weights_hash, bundle.codebook_hashes[profile])
    decoded = decode_stream(
        encoded.bitstream.data,
        codebooks,
        bundle.weights,
        bundle.weights_hash,
        bundle.codebook_hashes[profile],
    )
    if not np.array_equal(decoded.reconstructions, encoded.reconstructions):
        raise NumericError(f"{stream.name}: decoder reconstructions diverged from the encoder")
    frames = encoded.bitstream.frames
    sq_flags = np.array([f.sq_flag for f in frames], dtype=np.int64)
    vq_flags = np.array([f.vq_flag for f in frames], dtype=np.int64)
    discarded = np.array([not f.sq_indices and not f.vq_indices for f in frames], dtype=bool)
    return UtteranceResult(stream.name, encoded, sq_flags, vq_flags, discarded)


def _runs(mask: np.ndarray) -> List[slice]:
    runs, start = [], None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append(slice(start, i))
            start = None
    if start is not None:
        runs.append(slice(start, len(mask)))
    return runs


def trace_filename(index: int, name: str) -> str:
    """Corpus position first, so utterances sharing a stem keep separate traces."""

    return f"{index:03d}_{name or 'utt'}.csv"


def write_trace(result: UtteranceResult, path: Path) -> None:
    residuals = result.encoded.residuals
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for n in range(residuals.shape[0]):
            writer.writerow(
                [
                    f"{abs(residuals[n, 0]):.8f}",
                    f"{np.sum(np.abs(residuals[n, 1:])):.8f}",
                    int(result.sq_flags[n]),
                    int(result.vq_flags[n]),
                ]
            )


def evaluate(
    corpus: Sequence[FeatureStream],
    bundle: CodecBundle,
    profile: ProfileName,
    trace_dir: Optional[Path] = None,
    workers: int = 1,
) -> EvalReport:
    """Encode and decode every utterance, checking the decoder against the encoder bit for bit."""

    corpus = [s for s in corpus if len(s)]
    if not corpus:
        raise EmptyStreamError("nothing to evaluate")
    profile = ProfileName(getattr(profile, "value", profile))
    codebooks = bundle.for_profile(profile)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda s: _run_utterance(s, bundle, profile), corpus))

    if trace_dir is not None:
        trace_dir = Path(trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for i, result in enumerate(results):
            write_trace(result, trace_dir / trace_filename(i, result.name))

    targets = np.concatenate([r.encoded.targets for r in results])
    residuals = np.concatenate([r.encoded.residuals for r in results])
    errors = np.concatenate([r.encoded.reconstructions - r.encoded.targets for r in results])
    frame_mse = np.mean(errors * errors, axis=1)
    sq_flags = np.concatenate([r.sq_flags for r in results])
    vq_flags = np.concatenate([r.vq_flags for r in results])

    longest, drift_errors = 0, []
    for result, start in zip(results, np.cumsum([0] + [len(r.discarded) for r in results[:-1]])):
        for run in _runs(result.discarded):
            longest = max(longest, run.stop - run.start)
            drift_errors.append(frame_mse[start + run.start : start + run.stop])
    if longest:
        logger.warning("Longest discarded run: %d frames (decoder runs on prediction alone)", longest)

    quantizers = quantizer_reports(codebooks)
    predicted = rate_report(
        codebooks.profile,
        {q.role: q.huffman_bits for q in quantizers},
        float(sq_flags.mean()),
        float(vq_flags.mean()),
    )
    feature_variance = float(np.sum(np.var(targets, axis=0)))
    residual_variance = float(np.sum(np.var(residuals, axis=0)))
    report = EvalReport(
        profile=profile,
        utterances=len(results),
        frames=int(frame_mse.size),
        measured_bitrate=measured_bitrate([r.encoded.bitstream for r in results]),
        predicted_bitrate=predicted.bitrate,
        predicted_bitrate_with_flags=predicted.bitrate_with_flags,
        distortion=DistortionStats(
            mean=float(frame_mse.mean()),
            p95=float(np.percentile(frame_mse, 95)),
            max=float(frame_mse.max()),
        ),
        ql_fraction_sq=float(sq_flags.mean()),
        ql_fraction_vq=float(vq_flags.mean()),
        residual_variance=residual_variance,
        feature_variance=feature_variance,
        variance_ratio=residual_variance / feature_variance if feature_variance > 0 else float("inf"),
        longest_discarded_run=int(longest),
        discarded_run_mse=float(np.concatenate(drift_errors).mean()) if drift_errors else 0.0,
    )
    logger.info(
        "Evaluated %s on %d frames: %.1f bps measured, %.1f bps predicted (with flags)",
        profile.value,
        report.frames,
        report.measured_bitrate,
        report.predicted_bitrate_with_flags,
    )
    return report
