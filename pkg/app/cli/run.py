"""
run - pretrain then adapt, one report per seed plus a summary table
"""

import argparse
import logging
from pathlib import Path
from typing import Optional

from app.cli.common import add_config_args, resolve_config, uncertainty_cache
from app.exceptions import DatasetFormatError
from app.models.schemas import RunConfig, SourceMode
from app.services.checkpoint_store import save_checkpoint
from app.services.config_store import dump_config_text
from app.services.datasets import DomainPair, check_descriptors, combine_sources, load_dataset
from app.services.experiment import consecutive_seeds, run_experiment, summarize_reports
from app.services.report_store import write_report, write_table

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("run", help="Pretrain on the source domain and adapt to the target domain")
    add_config_args(parser, policy_flags=True)
    parser.add_argument("--seeds", type=int, default=1, help="Number of consecutive seeds to run")
    parser.add_argument("--data", type=Path, help="Directory written by 'generate' (source_*.ubrds, target.ubrds)")
    parser.add_argument("--checkpoints", action="store_true", help="Save pretrained and adapted checkpoints")
    parser.add_argument("--workers", type=int, default=1, help="Threads for the MCD forward passes")
    parser.set_defaults(func=cmd_run)


def load_pair(data_dir: Path, config: RunConfig) -> DomainPair:
    """读取 generate 写出的文件；只读，不修改。数据与配置的类型或类别数不一致时报错"""
    source_paths = sorted(data_dir.glob("source_*.ubrds"))
    target_path = data_dir / "target.ubrds"
    if not source_paths or not target_path.exists():
        raise DatasetFormatError(f"{data_dir}: expected source_*.ubrds and target.ubrds")
    sources = [load_dataset(p) for p in source_paths]
    target = load_dataset(target_path)
    descriptors = [d.descriptor for d in [*sources, target]]
    check_descriptors(descriptors, config.dataset)
    if config.dataset.source_mode == SourceMode.COMBINE and len(sources) > 1:
        sources = [combine_sources(sources)]
    return DomainPair(sources=sources, target=target, descriptors=descriptors)


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(dump_config_text(config), encoding="utf-8")

    pair: Optional[DomainPair] = load_pair(args.data, config) if args.data else None
    cache = uncertainty_cache()
    reports = []
    for seed in consecutive_seeds(config.seed, args.seeds):
        outcome = run_experiment(config, seed=seed, pair=pair, uncertainty_cache=cache, workers=args.workers)
        write_report(outcome.report, outcome.manifest, out_dir / f"report_seed{seed}.jsonl")
        if args.checkpoints:
            save_checkpoint(outcome.pretrained, out_dir / f"pretrained_seed{seed}.npz")
            save_checkpoint(outcome.adapted, out_dir / f"adapted_seed{seed}.npz")
        reports.append(outcome.report)
        print(
            f"seed {seed}: source-only acc {outcome.report.source_only.accuracy:.4f} "
            f"mca {outcome.report.source_only.mean_class_accuracy:.4f} | "
            f"adapted acc {outcome.report.adapted.accuracy:.4f} "
            f"mca {outcome.report.adapted.mean_class_accuracy:.4f}"
        )

    summary = summarize_reports(reports)
    write_table([summary], out_dir / "summary.tsv")
    if len(reports) > 1:
        print(
            f"mean over {len(reports)} seeds: adapted acc {summary.adapted_accuracy_mean:.4f} "
            f"+/- {summary.adapted_accuracy_std:.4f}"
        )
    return 0
