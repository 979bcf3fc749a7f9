"""
Write a seeded synthetic corpus to disk.

What it does
- Builds N utterances of smoothly modulated cepstra with drifting pitch
- Stores each as a feature file (.prfs), or renders it to 16 kHz WAV with --wav
- Same seed, same files

How to run:
  python data_scripts/make_synthetic_corpus.py corpus/ --utterances 50 --seconds 3
  python data_scripts/make_synthetic_corpus.py corpus_wav/ --utterances 10 --wav
"""

import argparse
import logging
import os
import sys

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from app.core.logging import configure_logging  # type: ignore
from app.services.corpus_service import synthetic_corpus, write_corpus  # type: ignore

logger = logging.getLogger("make_synthetic_corpus")


def main() -> None:
    parser = argparse.ArgumentParser(description="Generate a synthetic training corpus.")
    parser.add_argument("out_dir", help="Directory to write utterances into")
    parser.add_argument("--utterances", type=int, default=50, help="Number of utterances")
    parser.add_argument("--seconds", type=float, default=3.0, help="Length of each utterance")
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--wav", action="store_true", help="Render WAV files instead of feature files")
    args = parser.parse_args()

    configure_logging("INFO")
    streams = synthetic_corpus(args.utterances, seconds=args.seconds, seed=args.seed)
    written = write_corpus(streams, args.out_dir, wav=args.wav, seed=args.seed)
    logger.info("Wrote %d utterances to %s", len(written), args.out_dir)


if __name__ == "__main__":
    main()
