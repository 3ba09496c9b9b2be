"""
伪标签重采样

流程 (每个 resampling epoch):
1. p~_{i,c} ~ N(mu_{i,c}, sigma_{i,c})，sigma = 0 时直接取 mu
2. 负值截断为 0 后按行归一化
3. psi: 按 p~_i 做加权随机采样得到伪标签 y~_i
4. nu_i = argmax_c mu_{i,c} 决定样本所在的 bin (与随机抽样无关)

重加权使用的是被选中类别在归一化之前、未截断的原始抽样值 p~_{i,y~_i}。
某一行截断后全为 0 时退回到 mu 作为类别分布，不抛异常，只计数。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.services.seeding import SeedLike, as_generator
from app.services.uncertainty import UncertaintyTable, argmax_bin_ids

logger = logging.getLogger(__name__)


@dataclass
class PseudoLabelState:
    """一次重采样后的全部目标样本状态"""
    scores: np.ndarray       # 归一化后的 p~
    labels: np.ndarray       # y~
    bin_ids: np.ndarray      # nu
    raw_scores: np.ndarray   # 未截断、未归一化的抽样值
    chosen_raw: np.ndarray   # raw_scores[i, y~_i]
    epoch: int = 0
    fallback_count: int = 0

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    def disagreement(self) -> float:
        """y~ != argmax mu 的比例"""
        if self.num_samples == 0:
            return 0.0
        return float(np.mean(self.labels != self.bin_ids))

    def bin_occupancy(self, num_classes: int) -> List[int]:
        """每个 bin 的样本数"""
        return np.bincount(self.bin_ids, minlength=num_classes).astype(int).tolist()


def draw_scores(table: UncertaintyTable, seed: SeedLike) -> np.ndarray:
    """逐元素从 N(mu, sigma) 抽样，不截断；sigma = 0 的位置精确返回 mu"""
    rng = as_generator(seed)
    positive = table.std > 0.0
    draws = rng.normal(table.mean, np.where(positive, table.std, 0.0))
    return np.where(positive, draws, table.mean)


def resample_scores(table: UncertaintyTable, seed: SeedLike) -> np.ndarray:
    """resample(mu, sigma)，负值截断为 0"""
    return np.maximum(draw_scores(table, seed), 0.0)


def normalize_and_draw(
    raw: np.ndarray,
    seed: SeedLike,
    fallback: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    psi(p~_i / sum_j p~_{i,j})

    Args:
        raw: 抽样得分，负值先截断为 0
        seed: 随机种子或生成器
        fallback: 截断后全为 0 的行改用的分布 (通常为 mu)；缺省为均匀分布

    Returns:
        (归一化得分, 伪标签, 退回行数)
    """
    rng = as_generator(seed)
    dist = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
    rows, num_classes = dist.shape

    empty = ~(dist.sum(axis=1) > 0.0)
    fallback_count = int(empty.sum())
    if fallback_count:
        if fallback is None:
            dist[empty] = 1.0 / num_classes
        else:
            dist[empty] = np.asarray(fallback, dtype=np.float64)[empty]
        logger.warning(f"{fallback_count} pseudo-label rows were all zero after clamping, using fallback distribution")

    scores = dist / dist.sum(axis=1, keepdims=True)

    cumulative = np.cumsum(dist, axis=1)
    thresholds = rng.random(rows) * cumulative[:, -1]
    labels = (cumulative <= thresholds[:, None]).sum(axis=1)
    # 浮点边界情况下不允许落到概率为 0 的尾部类别
    last_positive = num_classes - 1 - np.argmax(dist[:, ::-1] > 0.0, axis=1)
    labels = np.minimum(labels, last_positive)
    return scores, labels.astype(np.int64), fallback_count


class PseudoLabeler:
    """
    伪标签生成器

    保存跨 epoch 的诊断计数；结果只取决于 (table, seed)。
    """

    def __init__(self):
        self.epochs = 0
        self.fallback_total = 0

    def build_state(self, table: UncertaintyTable, seed: SeedLike, epoch: Optional[int] = None) -> PseudoLabelState:
        """resample -> psi -> nu"""
        rng = as_generator(seed)
        raw = draw_scores(table, rng)
        scores, labels, fallback_count = normalize_and_draw(raw, rng, fallback=table.mean)
        rows = np.arange(table.num_samples)
        state = PseudoLabelState(
            scores=scores,
            labels=labels,
            bin_ids=argmax_bin_ids(table),
            raw_scores=raw,
            chosen_raw=raw[rows, labels],
            epoch=self.epochs if epoch is None else epoch,
            fallback_count=fallback_count,
        )
        self.epochs += 1
        self.fallback_total += fallback_count
        return state

    def reset(self):
        self.epochs = 0
        self.fallback_total = 0


# 全局单例
pseudo_labeler = PseudoLabeler()


# 便捷函数
def build_state(table: UncertaintyTable, seed: SeedLike, epoch: int = 0) -> PseudoLabelState:
    """便捷函数，结果只取决于 (table, seed, epoch)；诊断计数记在全局单例上"""
    return pseudo_labeler.build_state(table, seed, epoch=epoch)
