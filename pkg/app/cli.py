#!/usr/bin/env python3
"""
Command-line harness for the predictive speech codec.

Usage:
  python -m app.cli extract speech.wav speech.prfs
  python -m app.cli train corpus/ --out bundle/ --profile all --epochs 30
  python -m app.cli encode speech.wav --bundle bundle/ --profile low --out speech.prbs
  python -m app.cli decode speech.prbs --bundle bundle/ --features-out out.prfs --wav-out out.wav
  python -m app.cli eval corpus/ --bundle bundle/ --profile mid --trace-dir traces/
  python -m app.cli profile-report
  python -m app.cli grad-check --seeds 5
  python -m app.cli dump-weights bundle/predictor.prdw

Settings come from PREDCODEC_* environment variables, then an optional
``--config`` file of ``key = value`` lines, then flags. Exit codes: 0 ok,
1 usage, 2 format or corrupt input, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

from app.core.config import Settings, load_settings
from app.core.errors import CodecError, InputError, NumericError
from app.core.logging import configure_logging
from app.db.bundle_repo import BundleRepo
from app.db.feature_repo import FeatureRepo
from app.db.weights_repo import dump_header, load_weights
from app.schemas.features import FeatureStream, PcmSignal
from app.schemas.quantization import ProfileName
from app.services.corpus_service import load_corpus, synthetic_corpus
from app.services.entropy_service import rate_report
from app.services.eval_service import evaluate
from app.services.feature_service import analyze, read_wav, write_wav
from app.services.predictor_service import count_parameters, fit_scaler, grad_check, init_weights
from app.services.bitstream_service import decode_header
from app.services.quantization_service import PROFILE_TABLE
from app.services.residual_service import decode_stream, encode_stream
from app.services.training_service import ALGORITHMIC_DELAY_MS, format_train_report, train_bundle, train_config_from_settings

logger = logging.getLogger(__name__)

GRAD_CHECK_LIMIT = 1e-4


class CodecArgumentParser(argparse.ArgumentParser):
    """Usage errors surface as InputError so they share exit code 1 with other input mistakes."""

    def error(self, message: str):
        raise InputError(f"{self.prog}: {message}")


def _settings(args: argparse.Namespace, **extra: Any) -> Settings:
    overrides: Dict[str, Any] = {"seed": args.seed, "log_level": args.log_level, "workers": args.workers}
    overrides.update(extra)
    return load_settings(args.config, overrides)


def _read_input(path: Path, raw: bool = False) -> Union[FeatureStream, PcmSignal]:
    """Feature files load as streams; audio stays PCM so that too-short input encodes to an empty stream."""

    if path.suffix.lower() == ".prfs":
        return FeatureRepo().load(path)
    return read_wav(path, raw=raw)


def _profile(value: Optional[str], settings: Settings) -> ProfileName:
    return ProfileName(value or settings.default_profile)


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, default=str))


def cmd_extract(args: argparse.Namespace) -> int:
    _settings(args)
    stream = analyze(read_wav(args.wav_in, raw=args.raw), name=Path(args.wav_in).stem)
    FeatureRepo().save(stream, args.features_out)
    logger.info("Wrote %d frames to %s", len(stream), args.features_out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = _settings(
        args,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        gru1_units=args.gru1_units,
        gru2_units=args.gru2_units,
        bundle_dir=args.out,
    )
    config = train_config_from_settings(settings, progress=args.progress)
    if args.synthetic:
        corpus = synthetic_corpus(args.synthetic, seconds=args.seconds, seed=settings.seed)
    else:
        if args.corpus_dir is None:
            raise InputError("train needs a corpus directory or --synthetic N")
        corpus = load_corpus(args.corpus_dir, workers=settings.workers)
    profiles = list(ProfileName) if args.profile == "all" else [_profile(args.profile, settings)]
    reports = train_bundle(corpus, profiles, settings.bundle_dir, config)
    for report in reports.values():
        print("\n".join(format_train_report(report)))
    print(f"bundle {settings.bundle_dir} hash {BundleRepo(settings.bundle_dir).bundle_hash()}")
    if args.report_json:
        Path(args.report_json).write_text(
            json.dumps({name.value: r.model_dump(mode="json") for name, r in reports.items()}, indent=2),
            encoding="utf-8",
        )
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    settings = _settings(args, bundle_dir=args.bundle)
    profile = _profile(args.profile, settings)
    bundle = BundleRepo(settings.bundle_dir).load([profile])
    source = _read_input(Path(args.input), raw=args.raw)
    encoded = encode_stream(
        source,
        bundle.for_profile(profile),
        bundle.weights,
        bundle.weights_hash,
        bundle.codebook_hashes[profile],
    )
    Path(args.out).write_bytes(encoded.bitstream.data)
    logger.info("Wrote %d bytes to %s", len(encoded.bitstream.data), args.out)
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    settings = _settings(args, bundle_dir=args.bundle)
    data = Path(args.bitstream_in).read_bytes()
    repo = BundleRepo(settings.bundle_dir)
    header = decode_header(data)
    bundle = repo.load()
    profile = bundle.profile_by_id(header.profile_id)
    decoded = decode_stream(
        data,
        bundle.for_profile(profile),
        bundle.weights,
        bundle.weights_hash,
        bundle.codebook_hashes[profile],
        synthesize=args.wav_out is not None,
        seed=settings.seed,
    )
    FeatureRepo().save(decoded.features, args.features_out)
    if args.wav_out is not None:
        write_wav(args.wav_out, decoded.pcm)
    logger.info("Decoded %d frames with profile %s", decoded.header.frame_count, profile.value)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args, bundle_dir=args.bundle)
    profile = _profile(args.profile, settings)
    bundle = BundleRepo(settings.bundle_dir).load([profile])
    corpus = load_corpus(args.corpus_dir, workers=settings.workers)
    report = evaluate(corpus, bundle, profile, trace_dir=args.trace_dir, workers=settings.workers)
    payload = report.model_dump(mode="json")
    if args.report_json:
        Path(args.report_json).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _print_json(payload)
    return 0


def cmd_profile_report(args: argparse.Namespace) -> int:
    _settings(args)
    names = list(ProfileName) if args.profile in (None, "all") else [ProfileName(args.profile)]
    for name in names:
        profile = PROFILE_TABLE[name]
        rate = rate_report(profile)
        bits = ", ".join(f"{role.value} {b}" for role, b in profile.role_bits().items())
        published = ", ".join(f"{role.value} {b}" for role, b in profile.published_bits.items())
        print(f"profile {name.value} (id {profile.profile_id})")
        print(f"  codebook bits: {bits}")
        print(f"  Q_L fractions: sq {profile.ql_fraction_sq} vq {profile.ql_fraction_vq}")
        print(f"  published bits per frame: {published}")
        print(f"  rate {rate.bitrate:.1f} bps, {rate.bitrate_with_flags:.1f} bps with flags")
    print(
        f"algorithmic delay {ALGORITHMIC_DELAY_MS:.0f} ms "
        "(10 ms frame + 5 ms look-ahead; a neural vocoder would add its own look-ahead)"
    )
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    settings = _settings(args)
    stream = synthetic_corpus(1, seconds=0.2, seed=settings.seed)[0]
    worst = 0.0
    for offset in range(args.seeds):
        seed = settings.seed + offset
        if args.weights:
            weights = load_weights(args.weights)
        else:
            weights = init_weights(fit_scaler([stream]), args.gru1_units, args.gru2_units, seed=seed)
        report = grad_check(weights, stream.slice(0, args.frames), seed=seed)
        for name, error in report.block_errors.items():
            print(f"seed {seed} {name:<18} {error:.3e}")
        worst = max(worst, report.max_error)
    print(f"max relative error {worst:.3e}")
    if worst >= GRAD_CHECK_LIMIT:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {GRAD_CHECK_LIMIT:.0e}")
    return 0


def cmd_dump_weights(args: argparse.Namespace) -> int:
    _settings(args)
    for line in dump_header(args.weights):
        print(line)
    print(f"  count_parameters {count_parameters(load_weights(args.weights))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value settings file")
    common.add_argument("--seed", type=int, help="Seed for every random choice")
    common.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING, ...")
    common.add_argument("--workers", type=int, help="Threads for corpus scans")

    parser = CodecArgumentParser(description="Predictive low-bitrate speech codec.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CodecArgumentParser)

    p = sub.add_parser("extract", parents=[common], help="WAV -> feature file")
    p.add_argument("wav_in", type=Path)
    p.add_argument("features_out", type=Path)
    p.add_argument("--raw", action="store_true", help="Input is headerless 16-bit PCM")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="Train predictor and codebooks into a bundle")
    p.add_argument("corpus_dir", type=Path, nargs="?")
    p.add_argument("--out", type=Path, help="Bundle directory (default: settings bundle_dir)")
    p.add_argument("--profile", default="all", choices=["all"] + [n.value for n in ProfileName])
    p.add_argument("--synthetic", type=int, help="Train on N synthetic utterances instead of a directory")
    p.add_argument("--seconds", type=float, default=3.0, help="Length of synthetic utterances")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--gru1-units", dest="gru1_units", type=int)
    p.add_argument("--gru2-units", dest="gru2_units", type=int)
    p.add_argument("--progress", action="store_true", help="Show a progress bar per epoch")
    p.add_argument("--report-json", dest="report_json", type=Path)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="WAV or feature file -> bitstream")
    p.add_argument("input", type=Path)
    p.add_argument("--bundle", type=Path)
    p.add_argument("--profile", choices=[n.value for n in ProfileName])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--raw", action="store_true")
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="Bitstream -> feature file (and WAV)")
    p.add_argument("bitstream_in", type=Path)
    p.add_argument("--bundle", type=Path)
    p.add_argument("--features-out", dest="features_out", type=Path, required=True)
    p.add_argument("--wav-out", dest="wav_out", type=Path)
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="Rate/distortion report on a corpus")
    p.add_argument("corpus_dir", type=Path)
    p.add_argument("--bundle", type=Path)
    p.add_argument("--profile", choices=[n.value for n in ProfileName])
    p.add_argument("--trace-dir", dest="trace_dir", type=Path, help="Per-utterance residual norm CSVs")
    p.add_argument("--report-json", dest="report_json", type=Path)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("profile-report", parents=[common], help="Profile table and published-rate arithmetic")
    p.add_argument("--profile", choices=["all"] + [n.value for n in ProfileName])
    p.set_defaults(handler=cmd_profile_report)

    p = sub.add_parser("grad-check", parents=[common], help="BPTT gradients against finite differences")
    p.add_argument("--weights", type=Path, help="Weight file to check (default: random small network)")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--gru1-units", dest="gru1_units", type=int, default=12)
    p.add_argument("--gru2-units", dest="gru2_units", type=int, default=8)
    p.set_defaults(handler=cmd_grad_check)

    p = sub.add_parser("dump-weights", parents=[common], help="Print a weight file header")
    p.add_argument("weights", type=Path)
    p.set_defaults(handler=cmd_dump_weights)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(_settings(args).log_level)
        return args.handler(args)
    except CodecError as exc:
        logger.error("%s", exc.detail)
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
