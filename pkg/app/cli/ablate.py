"""
ablate - smoothing/reweighting grid or epsilon sweep, resumable through SQLite
"""

import argparse
import logging
from pathlib import Path

from app.cli.common import add_config_args, resolve_config
from app.config import get_settings
from app.services.experiment import GRIDS, run_ablation
from app.services.report_store import AblationStore, write_table

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("ablate", help="Run an ablation grid over several seeds")
    add_config_args(parser)
    parser.add_argument("--grid", choices=GRIDS, default="dss", help="dss: 8 smoothing/reweighting rows; epsilon: sweep 0..0.4")
    parser.add_argument("--seeds", type=int, default=3, help="Consecutive seeds per cell")
    parser.add_argument("--workers", type=int, default=1, help="Parallel cell processes")
    parser.set_defaults(func=cmd_ablate)


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_dir = Path(config.out_dir)
    store = AblationStore(out_dir / get_settings().ABLATION_DB_NAME)
    rows = run_ablation(config, grid=args.grid, seeds=args.seeds, workers=args.workers, store=store)
    write_table(rows, out_dir / "ablation.tsv")

    print(f"{'label':<16} {'pre':<7} {'ada':<7} {'reweigh':<7} {'eps':>5} {'source-only':>12} {'adapted':>16}")
    for row in rows:
        print(
            f"{row.label:<16} {row.dss_pre.value:<7} {row.dss_ada.value:<7} {row.reweigh.value:<7} "
            f"{row.epsilon:>5.2f} {row.source_only_accuracy_mean:>12.4f} "
            f"{row.adapted_accuracy_mean:>8.4f}+/-{row.adapted_accuracy_std:.4f}"
        )
    return 0
