"""
generate - 写出源域 / 目标域交换文件并打印校验和
"""

import argparse
import logging
from pathlib import Path
from typing import Dict, List

from app.cli.common import add_config_args, resolve_config
from app.exceptions import ConfigurationError
from app.models.schemas import DatasetKind, RunConfig
from app.services.datasets import generate, pair_descriptors, save_dataset

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="Write synthetic source/target dataset files")
    add_config_args(parser)
    parser.add_argument(
        "--kinds",
        help="Comma separated generator kinds (blobs,moons); defaults to dataset.kind"
    )
    parser.set_defaults(func=cmd_generate)


def _kinds(text: str) -> List[DatasetKind]:
    try:
        return [DatasetKind(k.strip()) for k in text.split(",") if k.strip()]
    except ValueError as e:
        raise ConfigurationError(str(e), key="dataset.kind") from e


def write_datasets(config: RunConfig, kinds: List[DatasetKind], out_dir: Path) -> Dict[Path, str]:
    """每种生成器一个子目录: source_<d>.ubrds 与 target.ubrds"""
    written = {}
    for kind in kinds:
        settings = config.dataset.model_copy(update={"kind": kind})
        for descriptor in pair_descriptors(settings, config.seed):
            path = out_dir / kind.value / f"{descriptor.domain}.ubrds"
            written[path] = save_dataset(generate(descriptor), path)
    return written


def cmd_generate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    kinds = _kinds(args.kinds) if args.kinds else [config.dataset.kind]
    try:
        written = write_datasets(config, kinds, Path(config.out_dir))
    except OSError as e:
        raise ConfigurationError(f"cannot write datasets: {e}", key="out_dir") from e
    for path, checksum in written.items():
        print(f"{checksum}  {path}")
    logger.info(f"Wrote {len(written)} dataset files under {config.out_dir}")
    return 0
