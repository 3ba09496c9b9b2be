"""
eval - score a checkpoint on a labeled dataset file
"""

import argparse
from pathlib import Path

from app.exceptions import ShapeError
from app.services.checkpoint_store import load_checkpoint
from app.services.datasets import load_dataset
from app.services.trainer import evaluate


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Evaluate a checkpoint on a dataset file")
    parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint written by 'run --checkpoints'")
    parser.add_argument("--data", type=Path, required=True, help="Dataset interchange file")
    parser.set_defaults(func=cmd_eval)


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.num_classes != model.num_classes:
        raise ShapeError(f"dataset has {dataset.num_classes} classes, model predicts {model.num_classes}")
    accuracy, mca = evaluate(model, dataset.inputs, dataset.labels)
    print(f"accuracy {accuracy:.4f}")
    print(f"mean_class_accuracy {mca:.4f}")
    return 0
