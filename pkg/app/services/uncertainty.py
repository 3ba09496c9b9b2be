"""
Monte Carlo Dropout 不确定性提取

对冻结的模型快照做 |M| 次带 dropout mask 的前向传播 (mask 只作用于 g 的隐藏层)，
得到每个目标样本、每个类别的均值 mu 和标准差 sigma (分母 |M| - 1)。

- 每次前向采样一个 mask，整批样本共享；第 m 次前向的种子为 seed + m
- 除注入的 MCD mask 外均为推理模式 (没有训练时噪声)
- mu 是 softmax 行的均值，天然在单纯形上，不再归一化
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import ConfigurationError, EmptyDataError
from app.services.neuralcore import DropoutMask, Model, forward

logger = logging.getLogger(__name__)


@dataclass
class UncertaintyTable:
    """逐样本、逐类别的 (mu, sigma)"""
    mean: np.ndarray
    std: np.ndarray
    iterations: int
    snapshot_id: str
    rate: float = 0.0
    seed: int = 0

    @property
    def num_samples(self) -> int:
        return int(self.mean.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.mean.shape[1])


def summarize_passes(outputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    汇总 |M| 次前向结果

    Args:
        outputs: 形状 (|M|, samples, classes)

    Returns:
        (mu, sigma)，sigma 使用 |M| - 1 分母；|M| 次输出完全相同的位置
        mu 取该输出本身、sigma 恰好为 0
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.shape[0] < 2:
        raise ConfigurationError("at least 2 MCD passes are required", key="mcd.iterations")
    mean = outputs.mean(axis=0)
    std = outputs.std(axis=0, ddof=1)
    identical = np.all(outputs == outputs[0], axis=0)
    mean[identical] = outputs[0][identical]
    std[identical] = 0.0
    return mean, std


def extract_from_masks(
    model: Model,
    inputs: np.ndarray,
    masks: Sequence[DropoutMask],
    workers: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """用给定的 mask 序列做前向并汇总，返回 (mu, sigma)"""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda m: forward(model, inputs, m), masks))
    else:
        outputs = [forward(model, inputs, m) for m in masks]
    return summarize_passes(np.stack(outputs))


def extract_uncertainty(
    model: Model,
    target_inputs: np.ndarray,
    mcd_iterations: int,
    mcd_rate: float,
    seed: int,
    workers: int = 1
) -> UncertaintyTable:
    """
    extractUncertainty(D_T, f, g, theta)

    Args:
        model: 冻结的模型快照 (不会被修改)
        target_inputs: 全部目标域输入
        mcd_iterations: |M|，至少为 2
        mcd_rate: MCD dropout 比例，0 < rate < 1
        seed: 第 m 次前向使用 seed + m
        workers: 并行线程数
    """
    if mcd_iterations < 2:
        raise ConfigurationError(f"needs >= 2 iterations, got {mcd_iterations}", key="mcd.iterations")
    if not 0.0 < mcd_rate < 1.0:
        raise ConfigurationError(f"rate must be in (0, 1), got {mcd_rate}", key="mcd.rate")
    target_inputs = np.asarray(target_inputs, dtype=np.float64)
    if target_inputs.shape[0] == 0:
        raise EmptyDataError("target set is empty, nothing to extract")

    masks = [
        DropoutMask.sample(model.hidden_dim, mcd_rate, seed + m)
        for m in range(mcd_iterations)
    ]
    mean, std = extract_from_masks(model, target_inputs, masks, workers=workers)
    table = UncertaintyTable(
        mean=mean,
        std=std,
        iterations=mcd_iterations,
        snapshot_id=model.snapshot_id(),
        rate=mcd_rate,
        seed=seed,
    )
    logger.debug(
        f"Uncertainty extracted: {table.num_samples} samples, |M|={mcd_iterations}, "
        f"mean sigma={float(std.mean()):.4f}"
    )
    return table


def argmax_bin_ids(table: UncertaintyTable) -> np.ndarray:
    """nu_i = argmax_c mu_{i,c}，并列时取最小类别号"""
    if table.num_samples == 0:
        raise EmptyDataError("uncertainty table is empty")
    return np.argmax(table.mean, axis=1)


def export_table(table: UncertaintyTable, path: Union[str, Path]) -> None:
    """导出为制表符分隔文本: sample, class, mu, sigma"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# snapshot={table.snapshot_id} iterations={table.iterations} rate={table.rate} seed={table.seed}\n")
        fh.write("sample\tclass\tmu\tsigma\n")
        for i in range(table.num_samples):
            for c in range(table.num_classes):
                fh.write(f"{i}\t{c}\t{float(table.mean[i, c])!r}\t{float(table.std[i, c])!r}\n")


class UncertaintyCache:
    """
    磁盘缓存，键为 (snapshot id, 输入摘要, seed, |M|, rate)

    用于可恢复的长时间运行；不同快照、不同目标数据之间互不干扰。
    """

    def __init__(self, cache_dir: Union[str, Path]):
        self._dir = Path(cache_dir)
        self._dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def inputs_key(target_inputs: np.ndarray) -> str:
        """目标输入内容的 sha256 前 12 位"""
        data = np.ascontiguousarray(target_inputs, dtype=np.float64)
        digest = hashlib.sha256(str(data.shape).encode("utf-8"))
        digest.update(data.tobytes())
        return digest.hexdigest()[:12]

    def _path(self, snapshot_id: str, inputs_key: str, seed: int, iterations: int, rate: float) -> Path:
        return self._dir / f"mcd_{snapshot_id}_{inputs_key}_{seed}_{iterations}_{rate!r}.npz"

    def get(
        self,
        snapshot_id: str,
        inputs_key: str,
        seed: int,
        iterations: int,
        rate: float
    ) -> Optional[UncertaintyTable]:
        path = self._path(snapshot_id, inputs_key, seed, iterations, rate)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(bytes(data["meta"]).decode("utf-8"))
                table = UncertaintyTable(
                    mean=np.array(data["mean"]),
                    std=np.array(data["std"]),
                    iterations=int(meta["iterations"]),
                    snapshot_id=meta["snapshot_id"],
                    rate=float(meta["rate"]),
                    seed=int(meta["seed"]),
                )
        except (OSError, KeyError, ValueError) as e:
            logger.warning(f"Ignoring unreadable uncertainty cache entry {path}: {e}")
            self.misses += 1
            return None
        self.hits += 1
        return table

    def put(self, table: UncertaintyTable, inputs_key: str) -> None:
        meta = {
            "iterations": table.iterations,
            "snapshot_id": table.snapshot_id,
            "rate": table.rate,
            "seed": table.seed,
        }
        path = self._path(table.snapshot_id, inputs_key, table.seed, table.iterations, table.rate)
        with open(path, "wb") as fh:
            np.savez(
                fh,
                meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
                mean=table.mean,
                std=table.std,
            )

    def extract(
        self,
        model: Model,
        target_inputs: np.ndarray,
        mcd_iterations: int,
        mcd_rate: float,
        seed: int
    ) -> UncertaintyTable:
        """先查缓存，未命中则提取并写入"""
        key = self.inputs_key(target_inputs)
        cached = self.get(model.snapshot_id(), key, seed, mcd_iterations, mcd_rate)
        if cached is not None:
            return cached
        table = extract_uncertainty(model, target_inputs, mcd_iterations, mcd_rate, seed)
        self.put(table, key)
        return table
