"""
标签编码与 DSS 策略测试

用法: pytest test_smoothing.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from app.exceptions import ConfigurationError, UsageError
from app.models.schemas import AdaptScope, Domain, Phase, PretrainScope, SmoothingPolicy
from app.services.smoothing import (
    apply_policy,
    apply_policy_batch,
    encode_label,
    encode_labels,
    policy_epsilon,
    smoothed_domains,
)


def test_encode_label_examples():
    assert np.allclose(encode_label(0, 2, 0.2), [0.8, 0.2], atol=1e-15)
    for n in (1, 2, 7):
        assert np.array_equal(encode_label(n - 1, n, 0.0), np.eye(n)[n - 1])
    assert np.allclose(encode_label(2, 5, 0.25), [0.0625, 0.0625, 0.75, 0.0625, 0.0625], atol=1e-15)


def test_single_class_smoothing_is_rejected():
    with pytest.raises(ConfigurationError):
        encode_label(0, 1, 0.1)


def test_invalid_epsilon_and_labels():
    with pytest.raises(ConfigurationError) as excinfo:
        encode_label(0, 3, 1.0)
    assert excinfo.value.key == "dss.epsilon"
    with pytest.raises(ConfigurationError):
        encode_label(0, 3, -0.1)
    with pytest.raises(UsageError):
        encode_label(3, 3, 0.1)


def test_random_encodings_sum_to_one_and_keep_argmax():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        epsilon = float(rng.uniform(0.0, (n - 1) / n))
        labels = rng.integers(0, n, size=20)
        rows = encode_labels(labels, n, epsilon)
        assert np.all(np.abs(rows.sum(axis=1) - 1.0) <= 1e-12)
        assert np.array_equal(np.argmax(rows, axis=1), labels)


# === policy ===

def test_adapt_source_scope_leaves_target_one_hot():
    policy = SmoothingPolicy(epsilon=0.25, pretrain=PretrainScope.SOURCE, adapt=AdaptScope.SOURCE)
    assert np.array_equal(apply_policy(policy, Phase.ADAPT, Domain.TARGET, 1, 4), np.eye(4)[1])
    assert np.allclose(apply_policy(policy, Phase.ADAPT, Domain.SOURCE, 1, 4), encode_label(1, 4, 0.25))
    assert np.allclose(apply_policy(policy, Phase.PRETRAIN, Domain.SOURCE, 1, 4), encode_label(1, 4, 0.25))


def test_both_scope_smooths_target():
    policy = SmoothingPolicy(epsilon=0.2, pretrain=PretrainScope.NONE, adapt=AdaptScope.BOTH)
    assert np.allclose(apply_policy(policy, Phase.ADAPT, Domain.TARGET, 0, 2), [0.8, 0.2])
    assert smoothed_domains(policy, Phase.ADAPT) == frozenset({Domain.SOURCE, Domain.TARGET})
    assert smoothed_domains(policy, Phase.PRETRAIN) == frozenset()


def test_target_only_scope():
    policy = SmoothingPolicy(epsilon=0.2, adapt=AdaptScope.TARGET)
    assert policy_epsilon(policy, Phase.ADAPT, Domain.TARGET) == 0.2
    assert policy_epsilon(policy, Phase.ADAPT, Domain.SOURCE) == 0.0


def test_none_scopes_are_one_hot_everywhere():
    policy = SmoothingPolicy(epsilon=0.3, pretrain=PretrainScope.NONE, adapt=AdaptScope.NONE)
    labels = np.array([0, 2, 1])
    for phase, domain in ((Phase.PRETRAIN, Domain.SOURCE), (Phase.ADAPT, Domain.SOURCE), (Phase.ADAPT, Domain.TARGET)):
        assert np.array_equal(apply_policy_batch(policy, phase, domain, labels, 3), np.eye(3)[labels])


def test_pretrain_target_labels_are_a_usage_error():
    with pytest.raises(UsageError):
        apply_policy(SmoothingPolicy(), Phase.PRETRAIN, Domain.TARGET, 0, 3)


def test_policy_rejects_unknown_scope():
    with pytest.raises(ValueError):
        SmoothingPolicy(adapt="everything")
    with pytest.raises(ValueError):
        SmoothingPolicy(pretrain="target")
