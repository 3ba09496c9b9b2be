"""
神经网络引擎测试: softmax、前向、加权交叉熵梯度、SGD

用法: pytest test_neuralcore.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from app.exceptions import NumericError, ShapeError
from app.services.neuralcore import (
    Batch,
    DenseLayer,
    DropoutMask,
    Gradients,
    Model,
    cross_entropy_loss,
    forward,
    forward_pass,
    init_model,
    sgd_step,
    softmax,
    train_step,
    weighted_cross_entropy,
)


def _zero_model(input_dim=2, num_classes=3) -> Model:
    model = init_model(input_dim, num_classes, hidden=(4,), classifier_hidden=4, dropout_rate=0.5, seed=0)
    for param in model.parameters():
        param[...] = 0.0
    return model


def _random_problem(seed: int):
    """3 -> 5 -> (4 -> 3) 的小网络、3 个样本、平滑标签、随机权重与逐样本 mask"""
    rng = np.random.default_rng(seed)
    model = init_model(3, 3, hidden=(5,), classifier_hidden=4, dropout_rate=0.5, seed=seed)
    # 非零偏置，避免 ReLU 输入恰好落在 0 (不可导点)
    for layer in model.layers:
        layer.bias[...] = rng.normal(0.0, 0.1, size=layer.bias.shape)
    inputs = rng.normal(size=(3, 3))
    targets = rng.dirichlet(np.ones(3), size=3)
    weights = rng.uniform(0.0, 2.0, size=3)
    mask = DropoutMask.sample(4, 0.5, seed + 1000, rows=3)
    return model, inputs, targets, weights, mask


# === softmax / forward ===

def test_softmax_of_zero_logits_is_uniform():
    probs = forward(_zero_model(), np.array([[0.3, -1.2], [5.0, 2.0]]))
    assert np.allclose(probs, 1.0 / 3.0, atol=1e-15)


def test_softmax_worked_example():
    probs = softmax(np.array([[2.0 * np.log(2.0), 0.0]]))
    assert np.allclose(probs, [[0.8, 0.2]], atol=1e-12)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(20, 5))
    base = softmax(logits)
    for shift in (-50.0, -1.0, 3.5, 700.0):
        assert np.max(np.abs(softmax(logits + shift) - base)) <= 1e-9
    assert np.allclose(softmax(np.array([[7.0 + 2.0 * np.log(2.0), 7.0]])), [[0.8, 0.2]], atol=1e-12)
    assert np.all(np.abs(base.sum(axis=1) - 1.0) <= 1e-9)


def test_all_ones_mask_matches_unmasked_pass_bitwise():
    model = init_model(2, 4, seed=11)
    inputs = np.random.default_rng(0).normal(size=(50, 2))
    masked = forward(model, inputs, DropoutMask.ones(model.hidden_dim))
    assert np.array_equal(masked, forward(model, inputs))


def test_mask_entries_must_be_binary():
    with pytest.raises(ValueError):
        DropoutMask(np.array([1.0, 0.5]))


def test_forward_rejects_shape_mismatch():
    model = init_model(2, 3, seed=0)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        forward(model, np.zeros((4, 2)), DropoutMask.ones(model.hidden_dim + 1))


def test_forward_does_not_modify_parameters():
    model = init_model(2, 3, seed=4)
    before = model.snapshot_id()
    forward(model, np.ones((3, 2)), DropoutMask.sample(model.hidden_dim, 0.75, 9))
    assert model.snapshot_id() == before


# === weighted cross-entropy ===

def test_loss_at_equality_is_target_entropy():
    target = np.array([[0.7, 0.2, 0.1]])
    expected = -np.sum(target * np.log(target))
    assert cross_entropy_loss(target, target, np.ones(1)) == pytest.approx(expected, abs=1e-12)


def test_zero_weight_row_contributes_nothing():
    model, inputs, targets, weights, _ = _random_problem(5)
    weights[2] = 0.0
    loss_a, grads_a = weighted_cross_entropy(forward_pass(model, inputs), targets, weights)

    other_inputs = inputs.copy()
    other_inputs[2] = [9.0, -4.0, 2.5]
    other_targets = targets.copy()
    other_targets[2] = [1.0, 0.0, 0.0]
    loss_b, grads_b = weighted_cross_entropy(forward_pass(model, other_inputs), other_targets, weights)

    assert loss_a == pytest.approx(loss_b, abs=1e-15)
    for ga, gb in zip(grads_a.arrays(), grads_b.arrays()):
        assert np.allclose(ga, gb, atol=1e-15)


def test_non_finite_input_reports_row():
    probs = np.full((3, 2), 0.5)
    probs[1, 0] = np.nan
    with pytest.raises(NumericError) as excinfo:
        cross_entropy_loss(probs, np.full((3, 2), 0.5), np.ones(3))
    assert excinfo.value.row == 1


def _numeric_gradients(model, inputs, targets, weights, mask, step=1e-5):
    grads = []
    for param in model.parameters():
        grad = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + step
            plus = cross_entropy_loss(forward(model, inputs, mask), targets, weights)
            param[index] = original - step
            minus = cross_entropy_loss(forward(model, inputs, mask), targets, weights)
            param[index] = original
            grad[index] = (plus - minus) / (2.0 * step)
        grads.append(grad)
    return grads


def test_gradients_match_central_differences():
    """50 个随机小问题，梯度经过 f 与 g (含 dropout mask)"""
    for seed in range(50):
        model, inputs, targets, weights, mask = _random_problem(seed)
        _, analytic = weighted_cross_entropy(forward_pass(model, inputs, mask), targets, weights)
        numeric = _numeric_gradients(model, inputs, targets, weights, mask)

        a = np.concatenate([g.ravel() for g in analytic.arrays()])
        n = np.concatenate([g.ravel() for g in numeric])
        relative = np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12)
        assert relative <= 1e-4, f"seed {seed}: relative error {relative:.2e}"


# === SGD ===

def test_sgd_with_zero_learning_rate_keeps_parameters():
    model, inputs, targets, weights, _ = _random_problem(1)
    _, grads = weighted_cross_entropy(forward_pass(model, inputs), targets, weights)
    updated = sgd_step(model, grads, 0.0)
    for before, after in zip(model.parameters(), updated.parameters()):
        assert np.array_equal(before, after)


def test_sgd_scalar_update():
    one = lambda: DenseLayer(np.array([[1.0]]), np.array([1.0]))
    model = Model(feature_layers=[one()], classifier_layers=[one(), one()])
    grads = Gradients(weights=[np.array([[2.0]])] * 3, biases=[np.array([2.0])] * 3)
    updated = sgd_step(model, grads, 0.1)
    for param in updated.parameters():
        assert param.item() == pytest.approx(0.8)
    assert model.parameters()[0].item() == 1.0


def test_sgd_rejects_wrong_gradient_shapes():
    model = init_model(2, 3, seed=0)
    grads = Gradients(weights=[np.zeros((1, 1))] * 3, biases=[np.zeros(1)] * 3)
    with pytest.raises(ShapeError):
        sgd_step(model, grads, 0.1)


def test_single_step_decreases_loss():
    rng = np.random.default_rng(8)
    model = init_model(2, 3, seed=8)
    labels = rng.integers(0, 3, size=32)
    batch = Batch(
        inputs=rng.normal(size=(32, 2)),
        targets=np.eye(3)[labels],
        weights=np.ones(32),
        domains=np.zeros(32, dtype=int),
    )
    before = cross_entropy_loss(forward(model, batch.inputs), batch.targets, batch.weights)
    updated, _ = train_step(model, batch, 0.01)
    after = cross_entropy_loss(forward(updated, batch.inputs), batch.targets, batch.weights)
    assert after < before


def test_batch_validates_rows_and_weights():
    with pytest.raises(NumericError):
        Batch(np.zeros((2, 2)), np.array([[0.5, 0.4], [1.0, 0.0]]), np.ones(2), np.zeros(2))
    with pytest.raises(NumericError):
        Batch(np.zeros((2, 2)), np.eye(2), np.array([1.0, -0.1]), np.zeros(2))
    with pytest.raises(ShapeError):
        Batch(np.zeros((3, 2)), np.eye(2), np.ones(2), np.zeros(2))


def test_same_seed_gives_identical_parameters():
    def run():
        model = init_model(2, 4, seed=21)
        rng = np.random.default_rng(21)
        for step in range(10):
            labels = rng.integers(0, 4, size=16)
            batch = Batch(rng.normal(size=(16, 2)), np.eye(4)[labels], np.ones(16), np.zeros(16))
            mask = DropoutMask.sample(model.hidden_dim, 0.75, step, rows=16)
            model, _ = train_step(model, batch, 0.1, mask)
        return model

    first, second = run(), run()
    assert first.snapshot_id() == second.snapshot_id()
    for a, b in zip(first.parameters(), second.parameters()):
        assert np.array_equal(a, b)


def test_model_requires_two_layer_classifier():
    layer = DenseLayer(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        Model(feature_layers=[layer], classifier_layers=[layer])
