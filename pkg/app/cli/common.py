"""
Shared argument groups and config resolution for the subcommands.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from app.config import get_settings
from app.models.schemas import AdaptScope, PretrainScope, ReweighMode, RunConfig
from app.services.config_store import build_config, load_config_file, parse_overrides
from app.services.uncertainty import UncertaintyCache

logger = logging.getLogger(__name__)


def add_config_args(parser: argparse.ArgumentParser, policy_flags: bool = False) -> None:
    """--config / --set / --seed / --out, plus the smoothing and reweighting flags when asked."""
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override one dotted key (repeatable)"
    )
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--out", help="Output directory")
    if policy_flags:
        parser.add_argument("--dss-pre", choices=[s.value for s in PretrainScope], help="Smoothing scope while pretraining")
        parser.add_argument("--dss-ada", choices=[s.value for s in AdaptScope], help="Smoothing scope while adapting")
        parser.add_argument("--reweigh", choices=[m.value for m in ReweighMode], help="Target loss weight factors")


def _flag_layer(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "out_dir": args.out,
        "dss.pretrain": getattr(args, "dss_pre", None),
        "dss.adapt": getattr(args, "dss_ada", None),
        "reweigh": getattr(args, "reweigh", None),
    }


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < --set < dedicated flags"""
    settings = get_settings()
    base = {"seed": settings.DEFAULT_SEED, "out_dir": settings.OUTPUT_DIR}
    file_layer = load_config_file(args.config) if args.config else {}
    return build_config(base, file_layer, parse_overrides(args.overrides), _flag_layer(args))


def uncertainty_cache() -> Optional[UncertaintyCache]:
    settings = get_settings()
    if not settings.UNCERTAINTY_CACHE:
        return None
    logger.info(f"Uncertainty cache enabled: {settings.CACHE_DIR}")
    return UncertaintyCache(settings.CACHE_DIR)
