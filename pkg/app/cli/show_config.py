"""
show-config - every key with its effective value and description
"""

import argparse

from app.cli.common import add_config_args, resolve_config
from app.services.config_store import config_hash, describe_config


def register(subparsers) -> None:
    parser = subparsers.add_parser("show-config", help="Print the effective configuration")
    add_config_args(parser, policy_flags=True)
    parser.set_defaults(func=cmd_show_config)


def cmd_show_config(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    rows = describe_config(config)
    width = max(len(key) for key, _, _ in rows)
    for key, value, description in rows:
        print(f"{key:<{width}} = {value:<12} # {description}")
    print(f"# config hash {config_hash(config)}")
    return 0
