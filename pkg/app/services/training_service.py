"""Sequential training: scaler, predictor, thresholds, codebooks, Huffman statistics."""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from app.core.config import Settings
from app.core.errors import EmptyStreamError
from app.db.bundle_repo import BundleRepo
from app.schemas.features import FeatureStream
from app.schemas.predictor import PredictorWeights, TrainConfig
from app.schemas.quantization import CodebookSet, ProfileName
from app.schemas.reports import TrainReport
from app.services.entropy_service import estimate_frequencies, quantizer_reports, rate_report
from app.services.pitch_service import conditioning_pitch
from app.services.predictor_service import count_parameters, fit_scaler, train_predictor
from app.services.quantization_service import get_profile, train_codebooks

logger = logging.getLogger(__name__)

# 10 ms waiting for the current frame plus the 5 ms the analysis window reaches past it.
ALGORITHMIC_DELAY_MS = 15.0


def train_config_from_settings(settings: Settings, **overrides) -> TrainConfig:
    values = {name: getattr(settings, name) for name in TrainConfig.model_fields if hasattr(settings, name)}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def fit_profile_codebooks(
    corpus: Sequence[FeatureStream], weights: PredictorWeights, profile: ProfileName, config: TrainConfig
) -> CodebookSet:
    """Codebooks for one profile with symbol counts and Q_L shares measured by the real encoder."""

    trained = train_codebooks(corpus, weights, get_profile(profile), config)
    estimate = estimate_frequencies(corpus, trained, weights, seed=config.seed, segment_seconds=config.segment_seconds)
    return CodebookSet(
        profile=trained.profile,
        codebooks=trained.codebooks,
        counts=estimate.counts,
        measured_ql_fraction_sq=estimate.ql_fraction_sq,
        measured_ql_fraction_vq=estimate.ql_fraction_vq,
    )


def profile_report(codebooks: CodebookSet, weights: PredictorWeights, epoch_losses: List[float]) -> TrainReport:
    quantizers = quantizer_reports(codebooks)
    rate = rate_report(
        codebooks.profile,
        {q.role: q.huffman_bits for q in quantizers},
        codebooks.measured_ql_fraction_sq,
        codebooks.measured_ql_fraction_vq,
    )
    return TrainReport(
        profile=codebooks.profile.name,
        parameters=count_parameters(weights),
        final_loss=epoch_losses[-1] if epoch_losses else float("nan"),
        epoch_losses=list(epoch_losses),
        theta_sq=codebooks.profile.theta_sq,
        theta_vq=codebooks.profile.theta_vq,
        ql_fraction_sq=codebooks.measured_ql_fraction_sq,
        ql_fraction_vq=codebooks.measured_ql_fraction_vq,
        quantizers=quantizers,
        rate=rate,
        algorithmic_delay_ms=ALGORITHMIC_DELAY_MS,
    )


def train_bundle(
    corpus: Sequence[FeatureStream],
    profiles: Iterable[ProfileName],
    out_dir: Path,
    config: TrainConfig,
    initial: Optional[PredictorWeights] = None,
) -> Dict[ProfileName, TrainReport]:
    """Train everything and write a bundle directory; returns one report per profile."""

    corpus = [s for s in corpus if len(s)]
    if not corpus:
        raise EmptyStreamError("cannot train on an empty corpus")
    profiles = [ProfileName(getattr(p, "value", p)) for p in profiles]

    scaler = initial.scaler if initial is not None else fit_scaler(corpus)
    conditioning = [conditioning_pitch(s) for s in corpus]
    result = train_predictor(corpus, config, scaler, conditioning=conditioning, initial=initial)
    logger.info(
        "Predictor trained: %d parameters, final loss %.6f",
        count_parameters(result.weights),
        result.final_loss,
    )

    repo = BundleRepo(out_dir)
    repo.save_weights(result.weights, seed=config.seed)
    reports: Dict[ProfileName, TrainReport] = {}
    for i, name in enumerate(profiles):
        codebooks = fit_profile_codebooks(corpus, result.weights, name, config)
        repo.save_codebooks(codebooks, make_default=(i == 0))
        reports[name] = profile_report(codebooks, result.weights, result.epoch_losses)
    return reports


def format_train_report(report: TrainReport) -> List[str]:
    """Codebook bits next to Huffman bits per quantizer, then the resulting rate."""

    lines = [
        f"profile {report.profile.value}: {report.parameters} predictor parameters, final loss {report.final_loss:.6f}",
        f"  thresholds theta_sq={report.theta_sq:.6f} theta_vq={report.theta_vq:.6f}",
        f"  Q_L fractions sq={report.ql_fraction_sq:.3f} vq={report.ql_fraction_vq:.3f}",
        f"  {'quantizer':<9} {'codebook':>8} {'huffman':>8} {'entropy':>8} {'published':>9}",
    ]
    for q in report.quantizers:
        published = f"{q.published_bits:.1f}" if q.published_bits is not None else "-"
        lines.append(f"  {q.role.value:<9} {q.codebook_bits:>8d} {q.huffman_bits:>8.2f} {q.entropy_bits:>8.2f} {published:>9}")
    lines.append(
        f"  rate {report.rate.bitrate:.1f} bps ({report.rate.bitrate_with_flags:.1f} bps with flags), "
        f"algorithmic delay {report.algorithmic_delay_ms:.0f} ms"
    )
    return lines
