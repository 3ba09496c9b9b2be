"""
UBR2S Adaptation Toolkit - command-line entry point

Subcommands:
- generate     write synthetic source/target dataset files
- run          pretrain, adapt and report (one or more seeds)
- ablate       smoothing/reweighting grid or epsilon sweep
- eval         score a checkpoint on a dataset file
- show-config  print every configuration key

Usage: python -m app.main <subcommand> [options]
"""

import argparse
import logging
import sys
from typing import List, Optional

from app.cli import ablate, evaluate, generate, run, show_config
from app.config import get_settings
from app.exceptions import UBRSError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="python -m app.main",
        description=f"{settings.APP_NAME}: uncertainty-based resampling and reweighting for domain adaptation",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (generate, run, ablate, evaluate, show_config):
        module.register(subparsers)
    return parser


def configure_logging() -> None:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.get_log_level(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Returns 0 on success, 2 on toolkit errors, 1 on anything unexpected."""
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UBRSError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
