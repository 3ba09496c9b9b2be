"""
Bin 管理与混合批次构造

- 源域 bin: 每个源域 d、每个类别 c 的样本下标 (按真实标签，只建一次)
- 目标域 bin: 按 nu 划分，每次伪标签重采样后清空重建
- 每个批次先选 beta 个类别 (目标 bin 与当前源域 bin 都非空)，
  再每类从两侧各抽 |b| / (2 len(classes)) 个样本
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from app.exceptions import ConfigurationError, StarvationError
from app.services.pseudolabel import PseudoLabelState
from app.services.seeding import SeedLike, as_generator, derive_seed

logger = logging.getLogger(__name__)


def _partition(labels: np.ndarray, num_classes: int) -> List[np.ndarray]:
    """按标签把下标分组，组内保持升序"""
    labels = np.asarray(labels, dtype=np.int64)
    return [np.flatnonzero(labels == c) for c in range(num_classes)]


@dataclass
class BinIndex:
    """源域 bin [domain][class] 与目标域 bin [class]"""
    num_classes: int
    source_bins: List[List[np.ndarray]]
    target_bins: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.target_bins:
            self.target_bins = [np.empty(0, dtype=np.int64) for _ in range(self.num_classes)]

    @classmethod
    def from_source_labels(cls, source_labels: Sequence[np.ndarray], num_classes: int) -> "BinIndex":
        """每个源域一组 bin"""
        if not source_labels:
            raise ConfigurationError("at least one source domain is required", key="dataset.source_rotations")
        return cls(
            num_classes=num_classes,
            source_bins=[_partition(labels, num_classes) for labels in source_labels],
        )

    @property
    def num_domains(self) -> int:
        return len(self.source_bins)

    def rebuild_target_bins(self, bin_ids: np.ndarray) -> None:
        """清空后按 nu 重建"""
        self.target_bins = _partition(bin_ids, self.num_classes)

    def target_sizes(self) -> List[int]:
        return [int(b.size) for b in self.target_bins]

    def eligible_classes(self, source_domain: int = 0) -> np.ndarray:
        """目标 bin 与所选源域 bin 都非空的类别"""
        source = self.source_bins[source_domain]
        return np.array(
            [c for c in range(self.num_classes) if self.target_bins[c].size and source[c].size],
            dtype=np.int64,
        )


@dataclass
class BatchPlan:
    """一个批次的抽样计划"""
    classes: np.ndarray
    source_domain: int
    per_class: int
    source_indices: List[np.ndarray]
    target_indices: List[np.ndarray]
    requested_size: int

    @property
    def batch_size(self) -> int:
        return 2 * self.per_class * len(self.classes)

    def all_source_indices(self) -> np.ndarray:
        return np.concatenate(self.source_indices)

    def all_target_indices(self) -> np.ndarray:
        return np.concatenate(self.target_indices)

    def source_labels(self) -> np.ndarray:
        """源域一侧的类别 (与 all_source_indices 对齐)"""
        return np.repeat(self.classes, self.per_class)


@dataclass
class SamplerDiagnostics:
    """每个 cycle 的采样统计"""
    eligible_counts: List[int] = field(default_factory=list)
    shortfall_steps: int = 0
    replacement_draws: int = 0
    total_draws: int = 0

    def eligible_mean(self) -> float:
        return float(np.mean(self.eligible_counts)) if self.eligible_counts else 0.0

    def replacement_fraction(self) -> float:
        return self.replacement_draws / self.total_draws if self.total_draws else 0.0


def rebuild_target_bins(bins: BinIndex, state: PseudoLabelState) -> BinIndex:
    """B^T 按当前伪标签状态的 nu 重建"""
    bins.rebuild_target_bins(state.bin_ids)
    return bins


def sample_classes(
    bins: BinIndex,
    beta: int,
    seed: SeedLike,
    source_domain: int = 0,
    diagnostics: Optional[SamplerDiagnostics] = None
) -> np.ndarray:
    """
    sampleClasses: 从可用类别中无放回地选 beta 个

    可用类别不足 beta 时全部返回 (较短的列表) 并记入 diagnostics。

    Raises:
        StarvationError: 没有可用类别
    """
    if beta < 1:
        raise ConfigurationError(f"beta must be >= 1, got {beta}", key="batch.beta")
    eligible = bins.eligible_classes(source_domain)
    if diagnostics is not None:
        diagnostics.eligible_counts.append(int(eligible.size))
    if eligible.size == 0:
        raise StarvationError(f"no class has both a non-empty target bin and a source bin in domain {source_domain}")

    rng = as_generator(seed)
    if eligible.size < beta:
        if diagnostics is not None:
            diagnostics.shortfall_steps += 1
        logger.debug(f"Only {eligible.size} eligible classes for beta={beta}")
        return rng.permutation(eligible)
    return rng.choice(eligible, size=beta, replace=False)


def _draw(pool: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """bin 小于 count 时有放回，否则无放回"""
    return rng.choice(pool, size=count, replace=pool.size < count)


def sample_batch(
    bins: BinIndex,
    classes: np.ndarray,
    batch_size: int,
    source_domain: int,
    seed: SeedLike,
    diagnostics: Optional[SamplerDiagnostics] = None
) -> BatchPlan:
    """
    sampleBatch: 每个类别从源域 bin 与目标 bin 各抽 n 个下标

    n = max(1, floor(|b| / (2 len(classes))))
    """
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size == 0:
        raise StarvationError("cannot plan a batch without classes")
    per_class = max(1, batch_size // (2 * classes.size))
    rng = as_generator(seed)

    source_indices, target_indices = [], []
    for c in classes:
        source_pool = bins.source_bins[source_domain][c]
        target_pool = bins.target_bins[c]
        if source_pool.size == 0 or target_pool.size == 0:
            raise StarvationError(f"class {c} has an empty bin and cannot be sampled")
        source_indices.append(_draw(source_pool, per_class, rng))
        target_indices.append(_draw(target_pool, per_class, rng))
        if diagnostics is not None:
            diagnostics.total_draws += 2 * per_class
            diagnostics.replacement_draws += per_class * (int(source_pool.size < per_class) + int(target_pool.size < per_class))

    return BatchPlan(
        classes=classes,
        source_domain=source_domain,
        per_class=per_class,
        source_indices=source_indices,
        target_indices=target_indices,
        requested_size=batch_size,
    )


def choose_source_domain(num_domains: int, cycle: int, seed: int) -> int:
    """每个 cycle 均匀选择一个源域；只有一个源域时恒为 0"""
    if num_domains < 1:
        raise ConfigurationError("at least one source domain is required", key="dataset.source_rotations")
    if num_domains == 1:
        return 0
    rng = as_generator(derive_seed(seed, "source-domain", cycle))
    return int(rng.integers(num_domains))


class MixedBatchSampler:
    """
    混合批次采样器

    持有 BinIndex 与诊断计数；每一步用 (cycle, step) 派生的种子规划一个批次。
    """

    def __init__(self, bins: BinIndex, batch_size: int, beta: int, seed: int):
        self.bins = bins
        self.batch_size = batch_size
        self.beta = min(beta, bins.num_classes)
        self.seed = seed
        self.diagnostics = SamplerDiagnostics()

    def rebuild(self, state: PseudoLabelState) -> None:
        rebuild_target_bins(self.bins, state)

    def start_cycle(self) -> SamplerDiagnostics:
        """重置本 cycle 的诊断计数，返回上一个 cycle 的结果"""
        finished = self.diagnostics
        self.diagnostics = SamplerDiagnostics()
        return finished

    def plan(self, source_domain: int, cycle: int, step: int) -> BatchPlan:
        classes = sample_classes(
            self.bins,
            self.beta,
            derive_seed(self.seed, "classes", cycle, step),
            source_domain=source_domain,
            diagnostics=self.diagnostics,
        )
        return sample_batch(
            self.bins,
            classes,
            self.batch_size,
            source_domain,
            derive_seed(self.seed, "batch", cycle, step),
            diagnostics=self.diagnostics,
        )
