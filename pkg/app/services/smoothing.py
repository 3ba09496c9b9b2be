"""
标签编码与领域特定平滑 (DSS)

v(c)_i = 1 - eps      (i == c)
v(c)_i = eps / (N-1)  (i != c)

SmoothingPolicy 给出 eps 以及预训练 / 适配两个阶段各自平滑哪些域。
目标域在预训练阶段没有标签，请求目标域标签会报 UsageError。
"""

import numpy as np

from app.exceptions import ConfigurationError, UsageError
from app.models.schemas import AdaptScope, Domain, Phase, PretrainScope, SmoothingPolicy

# 每个阶段里会被平滑的域
_PRETRAIN_DOMAINS = {
    PretrainScope.NONE: frozenset(),
    PretrainScope.SOURCE: frozenset({Domain.SOURCE}),
}
_ADAPT_DOMAINS = {
    AdaptScope.NONE: frozenset(),
    AdaptScope.SOURCE: frozenset({Domain.SOURCE}),
    AdaptScope.TARGET: frozenset({Domain.TARGET}),
    AdaptScope.BOTH: frozenset({Domain.SOURCE, Domain.TARGET}),
}


def encode_labels(labels: np.ndarray, num_classes: int, epsilon: float) -> np.ndarray:
    """批量编码，每行对应一个标签"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if not 0.0 <= epsilon < 1.0:
        raise ConfigurationError(f"epsilon must be in [0, 1), got {epsilon}", key="dss.epsilon")
    if epsilon > 0.0 and num_classes < 2:
        raise ConfigurationError("label smoothing needs at least 2 classes", key="dataset.classes")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise UsageError(f"labels must lie in [0, {num_classes})")

    if epsilon == 0.0:
        rows = np.zeros((labels.size, num_classes))
    else:
        rows = np.full((labels.size, num_classes), epsilon / (num_classes - 1))
    rows[np.arange(labels.size), labels] = 1.0 - epsilon
    return rows


def encode_label(c: int, num_classes: int, epsilon: float) -> np.ndarray:
    """v(c)，eps = 0 即 one-hot"""
    return encode_labels(np.array([c]), num_classes, epsilon)[0]


def smoothed_domains(policy: SmoothingPolicy, phase: Phase) -> frozenset:
    """该阶段中接受平滑的域"""
    if phase == Phase.PRETRAIN:
        return _PRETRAIN_DOMAINS[policy.pretrain]
    return _ADAPT_DOMAINS[policy.adapt]


def policy_epsilon(policy: SmoothingPolicy, phase: Phase, domain: Domain) -> float:
    """(phase, domain) 在范围内则返回 eps，否则 0"""
    if phase == Phase.PRETRAIN and domain == Domain.TARGET:
        raise UsageError("pretraining is source-only, target labels are not available")
    return policy.epsilon if domain in smoothed_domains(policy, phase) else 0.0


def apply_policy_batch(
    policy: SmoothingPolicy,
    phase: Phase,
    domain: Domain,
    labels: np.ndarray,
    num_classes: int
) -> np.ndarray:
    """按策略批量编码一个域的标签"""
    return encode_labels(labels, num_classes, policy_epsilon(policy, phase, domain))


def apply_policy(
    policy: SmoothingPolicy,
    phase: Phase,
    domain: Domain,
    label: int,
    num_classes: int
) -> np.ndarray:
    """按策略编码单个标签"""
    return apply_policy_batch(policy, phase, domain, np.array([label]), num_classes)[0]
