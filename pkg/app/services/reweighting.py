"""
样本重加权

- 样本似然 (SL):   lambda_SL = 1 - clamp(|p~ - mu| / (2 sigma), 0, 1)
- 决策误差 (DE):   phi(i, c) = 1 - Phi(p~_{i,y~}, mu_{i,c}, sigma_{i,c})
                   lambda_DE = 1 - max_{c != y~} phi(i, c)
- 批内归一化:      omega_k = prod_k / mean_j(prod_j)，prod = lambda_DE * lambda_SL
                   源域样本 omega = 1

sigma = 0 时使用阶跃 / 指示函数极限，不加 epsilon 下限，因此测试可以精确断言。
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np
from scipy.special import erf

from app.exceptions import ConfigurationError, EmptyDataError, NumericError
from app.models.schemas import ReweighMode, WeightStats
from app.services.pseudolabel import PseudoLabelState
from app.services.uncertainty import UncertaintyTable

logger = logging.getLogger(__name__)

# 0 < sigma < SIGMA_FLOOR 时按 SIGMA_FLOOR 计算，避免 erf 参数溢出
SIGMA_FLOOR = 1e-12

ArrayLike = Union[float, np.ndarray]


def gaussian_cdf_array(x: ArrayLike, mu: ArrayLike, sigma: ArrayLike) -> np.ndarray:
    """
    Phi(x, mu, sigma) = 1/2 [1 + erf((x - mu) / (sigma sqrt 2))]，支持广播

    sigma = 0: x < mu 为 0, x > mu 为 1, x = mu 为 0.5
    """
    x, mu, sigma = np.broadcast_arrays(
        np.asarray(x, dtype=np.float64),
        np.asarray(mu, dtype=np.float64),
        np.asarray(sigma, dtype=np.float64),
    )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise NumericError("gaussian_cdf received a non-finite value")
    if np.any(sigma < 0):
        raise NumericError("gaussian_cdf received a negative sigma")

    degenerate = sigma == 0.0
    safe_sigma = np.where(degenerate, 1.0, np.maximum(sigma, SIGMA_FLOOR))
    smooth = 0.5 * (1.0 + erf((x - mu) / (safe_sigma * np.sqrt(2.0))))
    step = np.where(x < mu, 0.0, np.where(x > mu, 1.0, 0.5))
    return np.clip(np.where(degenerate, step, smooth), 0.0, 1.0)


def gaussian_cdf(x: float, mu: float, sigma: float) -> float:
    """标量版本的 Phi"""
    return float(gaussian_cdf_array(x, mu, sigma))


def sample_likelihoods(p: ArrayLike, mu: ArrayLike, sigma: ArrayLike) -> np.ndarray:
    """向量化的 lambda_SL"""
    p, mu, sigma = np.broadcast_arrays(
        np.asarray(p, dtype=np.float64),
        np.asarray(mu, dtype=np.float64),
        np.asarray(sigma, dtype=np.float64),
    )
    deviation = np.abs(p - mu)
    degenerate = sigma == 0.0
    ratio = deviation / np.where(degenerate, 1.0, 2.0 * sigma)
    smooth = 1.0 - np.clip(ratio, 0.0, 1.0)
    indicator = np.where(deviation == 0.0, 1.0, 0.0)
    return np.where(degenerate, indicator, smooth)


def sample_likelihood(p: float, mu: float, sigma: float) -> float:
    """lambda_SL = 1 - clamp(|p - mu| / (2 sigma), 0, 1)"""
    if sigma < 0:
        raise NumericError("sample_likelihood received a negative sigma")
    return float(sample_likelihoods(p, mu, sigma))


def decision_errors(
    p_chosen: np.ndarray,
    means: np.ndarray,
    stds: np.ndarray,
    chosen: np.ndarray
) -> np.ndarray:
    """
    向量化的 lambda_DE

    Args:
        p_chosen: (K,) 被选中类别的原始抽样值
        means, stds: (K, N) 每个样本的 (mu, sigma) 行
        chosen: (K,) 伪标签
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    stds = np.atleast_2d(np.asarray(stds, dtype=np.float64))
    if means.shape[1] < 2:
        raise ConfigurationError("decision error needs at least 2 classes", key="dataset.classes")
    p_chosen = np.asarray(p_chosen, dtype=np.float64).reshape(-1)
    chosen = np.asarray(chosen, dtype=np.int64).reshape(-1)

    exceedance = 1.0 - gaussian_cdf_array(p_chosen[:, None], means, stds)
    exceedance[np.arange(len(chosen)), chosen] = -np.inf
    return np.clip(1.0 - exceedance.max(axis=1), 0.0, 1.0)


def decision_error(p_chosen: float, mean_row: np.ndarray, std_row: np.ndarray, chosen: int) -> float:
    """lambda_DE = 1 - max{phi(i, c) | c != y~}"""
    return float(decision_errors(np.array([p_chosen]), np.asarray(mean_row)[None, :], np.asarray(std_row)[None, :], np.array([chosen]))[0])


def batch_weights(products: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    omega_k = prod_k / ((1/K) sum_j prod_j)

    Returns:
        (omega, starved)；全部乘积为 0 时 omega 全为 0 且 starved 为 True
    """
    products = np.asarray(products, dtype=np.float64)
    if products.size == 0:
        raise EmptyDataError("batch has no target samples to weight")
    if not np.all(np.isfinite(products)) or np.any(products < 0):
        raise NumericError("weight products must be finite and nonnegative")
    center = products.mean()
    if center <= 0.0:
        logger.warning(f"All {products.size} target weight products are zero, batch contributes no target gradient")
        return np.zeros_like(products), True
    return products / center, False


def assemble_weights(num_source: int, target_omega: np.ndarray) -> np.ndarray:
    """源域样本在前 (omega = 1)，目标域样本在后"""
    return np.concatenate([np.ones(num_source), np.asarray(target_omega, dtype=np.float64)])


@dataclass
class WeightRecord:
    """一个批次中目标样本的权重"""
    sample_likelihood: np.ndarray
    decision_error: np.ndarray
    product: np.ndarray
    omega: np.ndarray
    starved: bool = False


def compute_weights(
    state: PseudoLabelState,
    table: UncertaintyTable,
    indices: np.ndarray,
    mode: ReweighMode = ReweighMode.DE_SL
) -> WeightRecord:
    """
    calcError(mu, sigma, p~, y~)：按当前状态为批次中的目标样本计算权重

    mode 决定哪些因子进入乘积 (none / sl / de / de+sl)。
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = state.labels[indices]
    p = state.chosen_raw[indices]
    means = table.mean[indices]
    stds = table.std[indices]
    rows = np.arange(len(indices))

    sl = sample_likelihoods(p, means[rows, labels], stds[rows, labels])
    de = decision_errors(p, means, stds, labels)

    if mode == ReweighMode.NONE:
        product = np.ones(len(indices))
    elif mode == ReweighMode.SL:
        product = sl
    elif mode == ReweighMode.DE:
        product = de
    else:
        product = de * sl

    omega, starved = batch_weights(product)
    return WeightRecord(sample_likelihood=sl, decision_error=de, product=product, omega=omega, starved=starved)


@dataclass
class WeightStatsAccumulator:
    """累积一个 cycle 内的权重，输出 min/mean/max"""
    sl: List[np.ndarray] = field(default_factory=list)
    de: List[np.ndarray] = field(default_factory=list)
    omega: List[np.ndarray] = field(default_factory=list)
    starved_batches: int = 0

    def add(self, record: WeightRecord):
        self.sl.append(record.sample_likelihood)
        self.de.append(record.decision_error)
        self.omega.append(record.omega)
        if record.starved:
            self.starved_batches += 1

    def summary(self) -> WeightStats:
        if not self.sl:
            return WeightStats(starved_batches=self.starved_batches)
        sl = np.concatenate(self.sl)
        de = np.concatenate(self.de)
        omega = np.concatenate(self.omega)
        return WeightStats(
            count=int(sl.size),
            sl_min=float(sl.min()), sl_mean=float(sl.mean()), sl_max=float(sl.max()),
            de_min=float(de.min()), de_mean=float(de.mean()), de_max=float(de.max()),
            omega_min=float(omega.min()), omega_mean=float(omega.mean()), omega_max=float(omega.max()),
            starved_batches=self.starved_batches,
        )
