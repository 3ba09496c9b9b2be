"""
最小全连接神经网络引擎

结构: 特征提取器 f (若干层 Dense + ReLU) 接两层分类器 g
      (Dense + ReLU -> dropout -> Dense -> softmax)。

- dropout 只作用在 g 的隐藏层激活上 (MCD 推理与训练时相同位置)
- dropout 采用 inverted scaling: 保留的激活除以 keep probability
- 损失: 按样本加权的交叉熵，标签可以是平滑后的概率行
- 优化: 朴素 SGD，不带动量
- 同一种子下完全确定
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import NumericError, ShapeError
from app.services.seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)

# log 之前的概率下限
PROB_FLOOR = 1e-12

# 标签行 / 概率行求和容差
ROW_SUM_TOLERANCE = 1e-9


@dataclass
class DenseLayer:
    """全连接层，weight 形状为 (in, out)"""
    weight: np.ndarray
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[1])

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy())


@dataclass
class DropoutMask:
    """
    g 隐藏层上的二值 mask

    values 形状为 (hidden,) 时整批共享同一个 mask (MCD 每次前向一个 mask)，
    形状为 (rows, hidden) 时逐样本 mask (训练时 dropout)。
    """
    values: np.ndarray
    keep_prob: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all((self.values == 0.0) | (self.values == 1.0)):
            raise ValueError("dropout mask entries must be exactly 0 or 1")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep probability must be in (0, 1], got {self.keep_prob}")

    @property
    def width(self) -> int:
        return int(self.values.shape[-1])

    @classmethod
    def ones(cls, width: int) -> "DropoutMask":
        """全 1 mask，等价于不加 mask"""
        return cls(np.ones(width), keep_prob=1.0)

    @classmethod
    def sample(
        cls,
        width: int,
        rate: float,
        seed: SeedLike,
        rows: Optional[int] = None
    ) -> "DropoutMask":
        """按 Bernoulli(1 - rate) 采样 mask"""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        rng = as_generator(seed)
        shape = (width,) if rows is None else (rows, width)
        keep = rng.random(shape) >= rate
        return cls(keep.astype(np.float64), keep_prob=1.0 - rate)

    def scale(self) -> np.ndarray:
        """乘到隐藏激活上的系数 (inverted scaling)"""
        if self.keep_prob == 1.0:
            return self.values
        return self.values / self.keep_prob


@dataclass
class Batch:
    """一个训练批次: 输入、标签编码、损失权重 omega、域标记 (-1 表示目标域)"""
    inputs: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        rows = self.inputs.shape[0]
        if self.targets.shape[0] != rows or self.weights.shape[0] != rows or self.domains.shape[0] != rows:
            raise ShapeError(
                f"batch row counts differ: inputs={rows}, targets={self.targets.shape[0]}, "
                f"weights={self.weights.shape[0]}, domains={self.domains.shape[0]}"
            )
        sums = self.targets.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
        if bad.size:
            raise NumericError("label encoding row does not sum to 1", row=int(bad[0]))
        bad = np.flatnonzero(~np.isfinite(self.weights) | (self.weights < 0))
        if bad.size:
            raise NumericError("loss weight must be finite and nonnegative", row=int(bad[0]))


@dataclass
class Model:
    """参数 theta = (theta_f, theta_g) 与 dropout 配置"""
    feature_layers: List[DenseLayer]
    classifier_layers: List[DenseLayer]
    dropout_rate: float = 0.0
    seed_lineage: List[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.classifier_layers) != 2:
            raise ShapeError(f"classifier must have exactly 2 layers, got {len(self.classifier_layers)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        layers = self.layers
        for prev, layer in zip(layers, layers[1:]):
            if prev.out_dim != layer.in_dim:
                raise ShapeError(f"layer widths do not chain: {prev.out_dim} -> {layer.in_dim}")
        for layer in layers:
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"bias shape {layer.bias.shape} does not match width {layer.out_dim}")

    @property
    def layers(self) -> List[DenseLayer]:
        return list(self.feature_layers) + list(self.classifier_layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.classifier_layers[0].in_dim

    @property
    def hidden_dim(self) -> int:
        return self.classifier_layers[0].out_dim

    @property
    def num_classes(self) -> int:
        return self.classifier_layers[1].out_dim

    def parameters(self) -> List[np.ndarray]:
        """按层顺序 [W0, b0, W1, b1, ...]"""
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def copy(self) -> "Model":
        return Model(
            feature_layers=[layer.copy() for layer in self.feature_layers],
            classifier_layers=[layer.copy() for layer in self.classifier_layers],
            dropout_rate=self.dropout_rate,
            seed_lineage=list(self.seed_lineage),
        )

    def snapshot_id(self) -> str:
        """参数内容哈希 (16 位 hex)，参数不变则 id 不变"""
        digest = hashlib.sha256()
        for param in self.parameters():
            digest.update(str(param.shape).encode("utf-8"))
            digest.update(np.ascontiguousarray(param, dtype=np.float64).tobytes())
        digest.update(repr(self.dropout_rate).encode("utf-8"))
        return digest.hexdigest()[:16]


@dataclass
class Gradients:
    """与 Model.layers 一一对应的梯度"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class ForwardPass:
    """前向缓存，供反向传播使用"""
    model: Model
    layer_inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    hidden_scale: Optional[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray


def _glorot_layer(fan_in: int, fan_out: int, rng: np.random.Generator) -> DenseLayer:
    """uniform(-a, a), a = sqrt(6 / (fan_in + fan_out))，偏置为 0"""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return DenseLayer(weight, np.zeros(fan_out))


def init_model(
    input_dim: int,
    num_classes: int,
    hidden: Sequence[int] = (64, 32),
    classifier_hidden: int = 32,
    dropout_rate: float = 0.75,
    seed: int = 0
) -> Model:
    """
    初始化模型

    Args:
        input_dim: 输入维度
        num_classes: 类别数 N
        hidden: 特征提取器各层宽度，最后一个即特征维度
        classifier_hidden: 两层分类器的隐藏宽度
        dropout_rate: g 隐藏层 dropout 比例
        seed: 初始化种子
    """
    if input_dim < 1 or num_classes < 1 or not hidden:
        raise ShapeError("input_dim, num_classes and hidden widths must be positive")
    rng = as_generator(seed)
    widths = [input_dim] + list(hidden)
    feature_layers = [_glorot_layer(a, b, rng) for a, b in zip(widths, widths[1:])]
    classifier_layers = [
        _glorot_layer(widths[-1], classifier_hidden, rng),
        _glorot_layer(classifier_hidden, num_classes, rng),
    ]
    return Model(feature_layers, classifier_layers, dropout_rate=dropout_rate, seed_lineage=[int(seed)])


def softmax(logits: np.ndarray) -> np.ndarray:
    """数值稳定的逐行 softmax"""
    z = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(z)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_inputs(model: Model, inputs: np.ndarray, mask: Optional[DropoutMask]) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise ShapeError(f"expected inputs of shape (rows, {model.input_dim}), got {inputs.shape}")
    if mask is not None:
        if mask.width != model.hidden_dim:
            raise ShapeError(f"mask width {mask.width} does not match classifier hidden width {model.hidden_dim}")
        if mask.values.ndim == 2 and mask.values.shape[0] != inputs.shape[0]:
            raise ShapeError(f"per-sample mask has {mask.values.shape[0]} rows for {inputs.shape[0]} inputs")
    return inputs


def forward_pass(model: Model, inputs: np.ndarray, mask: Optional[DropoutMask] = None) -> ForwardPass:
    """带缓存的前向传播；mask 为 None 时即确定性推理"""
    inputs = _check_inputs(model, inputs, mask)
    layer_inputs: List[np.ndarray] = []
    pre_activations: List[np.ndarray] = []

    a = inputs
    for layer in model.feature_layers:
        layer_inputs.append(a)
        z = a @ layer.weight + layer.bias
        pre_activations.append(z)
        a = np.maximum(z, 0.0)

    hidden_layer, output_layer = model.classifier_layers
    layer_inputs.append(a)
    z = a @ hidden_layer.weight + hidden_layer.bias
    pre_activations.append(z)
    h = np.maximum(z, 0.0)

    scale = None
    if mask is not None:
        scale = mask.scale()
        h = h * scale

    layer_inputs.append(h)
    logits = h @ output_layer.weight + output_layer.bias
    pre_activations.append(logits)

    return ForwardPass(
        model=model,
        layer_inputs=layer_inputs,
        pre_activations=pre_activations,
        hidden_scale=scale,
        logits=logits,
        probs=softmax(logits),
    )


def forward(model: Model, inputs: np.ndarray, mask: Optional[DropoutMask] = None) -> np.ndarray:
    """返回逐行 softmax 概率，不修改参数"""
    return forward_pass(model, inputs, mask).probs


def predict(model: Model, inputs: np.ndarray) -> np.ndarray:
    """确定性推理下的 argmax 类别"""
    return np.argmax(forward(model, inputs), axis=1)


def _first_bad_row(*arrays: np.ndarray) -> Optional[int]:
    for array in arrays:
        finite = np.isfinite(array)
        if array.ndim > 1:
            finite = finite.all(axis=1)
        bad = np.flatnonzero(~finite)
        if bad.size:
            return int(bad[0])
    return None


def cross_entropy_loss(probs: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> float:
    """mean_k( -omega_k * sum_c v_kc * log p_kc )，p 先截断到 PROB_FLOOR"""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if probs.shape != targets.shape or probs.shape[0] != weights.shape[0]:
        raise ShapeError(f"probs {probs.shape}, targets {targets.shape}, weights {weights.shape} do not match")
    bad = _first_bad_row(probs, targets, weights)
    if bad is not None:
        raise NumericError("non-finite value in loss inputs", row=bad)
    per_row = -(targets * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1)
    return float(np.mean(weights * per_row))


def backward(result: ForwardPass, dlogits: np.ndarray) -> Gradients:
    """从 logits 梯度反向传播到所有层"""
    layers = result.model.layers
    last = len(layers) - 1
    grad_w: List[np.ndarray] = [np.empty(0)] * len(layers)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(layers)

    delta = dlogits
    for i in range(last, -1, -1):
        grad_w[i] = result.layer_inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        upstream = delta @ layers[i].weight.T
        if i == last and result.hidden_scale is not None:
            upstream = upstream * result.hidden_scale
        delta = upstream * (result.pre_activations[i - 1] > 0.0)

    return Gradients(weights=grad_w, biases=grad_b)


def weighted_cross_entropy(
    result: ForwardPass,
    targets: np.ndarray,
    weights: np.ndarray
) -> Tuple[float, Gradients]:
    """
    加权交叉熵及其对全部参数的梯度

    Args:
        result: forward_pass 的结果 (包含 probs)
        targets: 标签编码，每行和为 1
        weights: 每个样本的 omega

    Returns:
        (loss, gradients)
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    loss = cross_entropy_loss(result.probs, targets, weights)
    rows = result.probs.shape[0]
    # d/dlogits of -sum_c t_c log softmax_c = p * sum(t) - t
    dlogits = (result.probs * targets.sum(axis=1, keepdims=True) - targets) * (weights / rows)[:, None]
    return loss, backward(result, dlogits)


def sgd_step(model: Model, gradients: Gradients, learning_rate: float) -> Model:
    """theta <- theta - lr * grad，返回新模型，原模型不变"""
    layers = model.layers
    if len(gradients.weights) != len(layers) or len(gradients.biases) != len(layers):
        raise ShapeError(f"expected gradients for {len(layers)} layers")
    updated = []
    for layer, gw, gb in zip(layers, gradients.weights, gradients.biases):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ShapeError(f"gradient shape {gw.shape}/{gb.shape} does not match layer {layer.weight.shape}")
        updated.append(DenseLayer(layer.weight - learning_rate * gw, layer.bias - learning_rate * gb))
    split = len(model.feature_layers)
    return Model(
        feature_layers=updated[:split],
        classifier_layers=updated[split:],
        dropout_rate=model.dropout_rate,
        seed_lineage=list(model.seed_lineage),
    )


def train_step(
    model: Model,
    batch: Batch,
    learning_rate: float,
    mask: Optional[DropoutMask] = None
) -> Tuple[Model, float]:
    """一次前向 + 加权交叉熵 + SGD 更新"""
    result = forward_pass(model, batch.inputs, mask)
    loss, grads = weighted_cross_entropy(result, batch.targets, batch.weights)
    return sgd_step(model, grads, learning_rate), loss
