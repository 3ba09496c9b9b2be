"""
模型检查点存储

文件格式 (numpy .npz 容器, 版本 1):
- meta: UTF-8 JSON 字节 (uint8 数组)，字段:
    format        固定为 "ubr2s-checkpoint"
    version       1
    feature_layers 特征提取器层数 (其余 2 层属于分类器)
    shapes        每层 [in, out]
    dropout_rate  g 隐藏层 dropout 比例
    seed_lineage  初始化种子以及之后各阶段的种子
    snapshot_id   参数哈希，加载时校验
- layer_<i>_weight / layer_<i>_bias: float64 参数
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from app.exceptions import DatasetFormatError
from app.services.neuralcore import DenseLayer, Model

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ubr2s-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path: Union[str, Path]) -> str:
    """
    保存检查点

    Returns:
        str: 模型 snapshot id
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshot = model.snapshot_id()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_layers": len(model.feature_layers),
        "shapes": [[layer.in_dim, layer.out_dim] for layer in model.layers],
        "dropout_rate": model.dropout_rate,
        "seed_lineage": [int(s) for s in model.seed_lineage],
        "snapshot_id": snapshot,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for i, layer in enumerate(model.layers):
        arrays[f"layer_{i}_weight"] = layer.weight.astype(np.float64)
        arrays[f"layer_{i}_bias"] = layer.bias.astype(np.float64)

    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.info(f"Checkpoint saved: {path} (snapshot {snapshot})")
    return snapshot


def load_checkpoint(path: Union[str, Path]) -> Model:
    """读取检查点并校验 snapshot id"""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
                raise DatasetFormatError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
            layers = [
                DenseLayer(np.array(data[f"layer_{i}_weight"]), np.array(data[f"layer_{i}_bias"]))
                for i in range(len(meta["shapes"]))
            ]
    except (OSError, KeyError, ValueError) as e:
        raise DatasetFormatError(f"{path}: cannot read checkpoint: {e}") from e

    split = meta["feature_layers"]
    model = Model(
        feature_layers=layers[:split],
        classifier_layers=layers[split:],
        dropout_rate=float(meta["dropout_rate"]),
        seed_lineage=list(meta["seed_lineage"]),
    )
    if model.snapshot_id() != meta["snapshot_id"]:
        raise DatasetFormatError(f"{path}: snapshot id mismatch, file is corrupted")
    return model
