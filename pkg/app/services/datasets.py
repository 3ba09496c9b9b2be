"""
合成双域数据集

- blobs: N 个类别中心均匀分布在单位圆上，各向同性高斯噪声
- moons: 两个交错的半圆
- 目标域 = 同一生成器的输出绕中心旋转 rotation 度并缩放 scale 倍
  (blobs 绕原点，moons 绕无噪声布局的质心)

同一个 descriptor 重新生成得到完全相同的字节。

交换文件格式 (.ubrds, 小端):
    magic     5 bytes  b"UBRDS"
    version   uint8    1
    hlen      uint32   头部 JSON 长度
    header    hlen 字节 UTF-8 JSON: descriptor, rows, dim, num_classes
    features  rows * dim 个 float64 (行优先)
    labels    rows 个 int64
"""

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from sklearn import datasets as sk_datasets

from app.exceptions import ConfigurationError, DatasetFormatError, EmptyDataError
from app.models.schemas import DatasetDescriptor, DatasetKind, DatasetSettings, SourceMode
from app.services.seeding import derive_seed

logger = logging.getLogger(__name__)

MAGIC = b"UBRDS"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<5sBI")

# 无噪声 moons 布局的质心
MOONS_CENTER = np.array([0.5, 0.25])


@dataclass
class DomainDataset:
    """一个域的数据；目标域标签只用于评估"""
    inputs: np.ndarray
    labels: np.ndarray
    domain: str
    num_classes: int
    descriptor: Optional[DatasetDescriptor] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigurationError(
                f"{self.inputs.shape[0]} input rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_samples(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])


@dataclass
class DomainPair:
    """一个或多个源域 + 一个目标域"""
    sources: List[DomainDataset]
    target: DomainDataset
    # 实际使用的各域 descriptor (合并之前的源域在前，目标域在最后)
    descriptors: List[DatasetDescriptor] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.target.num_classes


def check_descriptors(descriptors: List[DatasetDescriptor], settings: DatasetSettings) -> None:
    """读入的数据与配置的 dataset.kind / 类别数不一致时报错"""
    for descriptor in descriptors:
        if descriptor.kind != settings.kind:
            raise ConfigurationError(
                f"data for {descriptor.domain} is {descriptor.kind.value}, config says {settings.kind.value}",
                key="dataset.kind",
            )
        if descriptor.num_classes != settings.num_classes:
            raise ConfigurationError(
                f"data for {descriptor.domain} has {descriptor.num_classes} classes, "
                f"config says {settings.num_classes}",
                key="dataset.classes",
            )


def rotate_and_scale(points: np.ndarray, rotation: float, scale: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    """绕 center 旋转 rotation 度再缩放；整圈且 scale = 1 时原样复制"""
    points = np.asarray(points, dtype=np.float64)
    angle = math.radians(rotation % 360.0)
    if angle == 0.0 and scale == 1.0:
        return points.copy()
    center = np.asarray(center, dtype=np.float64)
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    matrix = np.array([[cos_a, sin_a], [-sin_a, cos_a]])  # 行向量右乘，逆时针
    return (points - center) @ matrix * scale + center


def _check_ranges(per_class: int, noise: float, rotation: float, scale: float):
    if per_class < 1:
        raise ConfigurationError(f"per_class must be >= 1, got {per_class}", key="dataset.per_class")
    if not (noise >= 0.0 and math.isfinite(noise)):
        raise ConfigurationError(f"noise must be finite and >= 0, got {noise}", key="dataset.noise")
    if not math.isfinite(rotation):
        raise ConfigurationError(f"rotation must be finite, got {rotation}", key="dataset.rotation")
    if not (scale > 0.0 and math.isfinite(scale)):
        raise ConfigurationError(f"scale must be finite and > 0, got {scale}", key="dataset.scale")


def blob_centers(num_classes: int) -> np.ndarray:
    """单位圆上等角度分布的类别中心"""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    return np.column_stack([np.cos(angles), np.sin(angles)])


def make_blobs(
    num_classes: int,
    per_class: int,
    rotation: float = 0.0,
    scale: float = 1.0,
    noise: float = 0.3,
    seed: int = 0,
    domain: str = "source"
) -> DomainDataset:
    """
    旋转高斯团

    Args:
        num_classes: 类别数 N (>= 2)
        per_class: 每类样本数
        rotation: 绕原点旋转的角度 (度)
        scale: 缩放因子
        noise: 各向同性噪声标准差
        seed: 生成种子 (0 <= seed < 2**32)
    """
    if num_classes < 2:
        raise ConfigurationError(f"blobs need >= 2 classes, got {num_classes}", key="dataset.classes")
    _check_ranges(per_class, noise, rotation, scale)
    inputs, labels = sk_datasets.make_blobs(
        n_samples=[per_class] * num_classes,
        centers=blob_centers(num_classes),
        cluster_std=noise,
        shuffle=True,
        random_state=seed,
    )
    descriptor = DatasetDescriptor(
        kind=DatasetKind.BLOBS,
        num_classes=num_classes,
        per_class=per_class,
        rotation=rotation,
        scale=scale,
        noise=noise,
        seed=seed,
        domain=domain,
    )
    return DomainDataset(
        inputs=rotate_and_scale(inputs, rotation, scale),
        labels=labels,
        domain=domain,
        num_classes=num_classes,
        descriptor=descriptor,
    )


def make_moons(
    per_class: int,
    rotation: float = 0.0,
    noise: float = 0.1,
    seed: int = 0,
    scale: float = 1.0,
    domain: str = "source"
) -> DomainDataset:
    """两个交错半圆，绕布局质心旋转"""
    _check_ranges(per_class, noise, rotation, scale)
    inputs, labels = sk_datasets.make_moons(
        n_samples=(per_class, per_class),
        noise=noise if noise > 0 else None,
        shuffle=True,
        random_state=seed,
    )
    descriptor = DatasetDescriptor(
        kind=DatasetKind.MOONS,
        num_classes=2,
        per_class=per_class,
        rotation=rotation,
        scale=scale,
        noise=noise,
        seed=seed,
        domain=domain,
    )
    return DomainDataset(
        inputs=rotate_and_scale(inputs, rotation, scale, center=MOONS_CENTER),
        labels=labels,
        domain=domain,
        num_classes=2,
        descriptor=descriptor,
    )


def generate(descriptor: DatasetDescriptor) -> DomainDataset:
    """按 descriptor 重新生成"""
    if descriptor.kind == DatasetKind.MOONS:
        return make_moons(
            descriptor.per_class, descriptor.rotation, descriptor.noise,
            descriptor.seed, scale=descriptor.scale, domain=descriptor.domain,
        )
    return make_blobs(
        descriptor.num_classes, descriptor.per_class, descriptor.rotation,
        descriptor.scale, descriptor.noise, descriptor.seed, domain=descriptor.domain,
    )


def dataset_seed(master: int, *parts: object) -> int:
    """派生种子截断到 32 位 (sklearn random_state 的范围)"""
    return derive_seed(master, "dataset", *parts) % (2 ** 32)


def pair_descriptors(settings: DatasetSettings, seed: int) -> List[DatasetDescriptor]:
    """源域 (每个旋转角一个) 与目标域的 descriptor，目标域在最后"""
    descriptors = [
        DatasetDescriptor(
            kind=settings.kind,
            num_classes=settings.num_classes,
            per_class=settings.per_class,
            rotation=rotation,
            scale=1.0,
            noise=settings.noise,
            seed=dataset_seed(seed, "source", d),
            domain=f"source_{d}",
        )
        for d, rotation in enumerate(settings.source_rotations)
    ]
    descriptors.append(
        DatasetDescriptor(
            kind=settings.kind,
            num_classes=settings.num_classes,
            per_class=settings.per_class,
            rotation=settings.rotation,
            scale=settings.scale,
            noise=settings.noise,
            seed=dataset_seed(seed, "target"),
            domain="target",
        )
    )
    return descriptors


def combine_sources(sources: List[DomainDataset]) -> DomainDataset:
    """把多个源域合并为一个 (source-combine 设置)"""
    if not sources:
        raise EmptyDataError("no source domains to combine")
    return DomainDataset(
        inputs=np.concatenate([s.inputs for s in sources]),
        labels=np.concatenate([s.labels for s in sources]),
        domain="source",
        num_classes=sources[0].num_classes,
    )


def make_domain_pair(settings: DatasetSettings, seed: int) -> DomainPair:
    """
    由配置生成源域 / 目标域

    source_mode = combine 时所有源域合并为一个 (D = 1)。
    """
    descriptors = pair_descriptors(settings, seed)
    *source_descriptors, target_descriptor = descriptors
    sources = [generate(d) for d in source_descriptors]
    if settings.source_mode == SourceMode.COMBINE and len(sources) > 1:
        sources = [combine_sources(sources)]
    target = generate(target_descriptor)
    logger.debug(
        f"Generated {settings.kind.value} pair: {len(sources)} source domain(s), "
        f"{target.num_samples} target samples, rotation={settings.rotation}"
    )
    return DomainPair(sources=sources, target=target, descriptors=descriptors)


# === Interchange file ===

def encode_dataset(dataset: DomainDataset) -> bytes:
    """序列化为交换格式字节"""
    if dataset.descriptor is None:
        raise DatasetFormatError("only generated datasets (with a descriptor) can be written")
    header = {
        "descriptor": dataset.descriptor.model_dump(mode="json"),
        "rows": dataset.num_samples,
        "dim": dataset.dim,
        "num_classes": dataset.num_classes,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([
        _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)),
        header_bytes,
        np.ascontiguousarray(dataset.inputs, dtype="<f8").tobytes(),
        np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes(),
    ])


def decode_dataset(payload: bytes, source: str = "<bytes>") -> DomainDataset:
    """从交换格式字节解析"""
    if len(payload) < _PREFIX.size:
        raise DatasetFormatError(f"{source}: file too short")
    magic, version, header_len = _PREFIX.unpack_from(payload, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{source}: unsupported version {version}")

    offset = _PREFIX.size
    try:
        header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
        descriptor = DatasetDescriptor.model_validate(header["descriptor"])
        rows, dim = int(header["rows"]), int(header["dim"])
        num_classes = int(header["num_classes"])
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetFormatError(f"{source}: bad header: {e}") from e

    offset += header_len
    feature_bytes = rows * dim * 8
    if len(payload) != offset + feature_bytes + rows * 8:
        raise DatasetFormatError(f"{source}: payload size does not match header ({rows} rows x {dim})")
    inputs = np.frombuffer(payload, dtype="<f8", count=rows * dim, offset=offset).reshape(rows, dim)
    labels = np.frombuffer(payload, dtype="<i8", count=rows, offset=offset + feature_bytes)
    return DomainDataset(
        inputs=inputs.astype(np.float64),
        labels=labels.astype(np.int64),
        domain=descriptor.domain,
        num_classes=num_classes,
        descriptor=descriptor,
    )


def save_dataset(dataset: DomainDataset, path: Union[str, Path]) -> str:
    """
    写入交换文件

    Returns:
        str: 文件内容的 sha256
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_dataset(dataset)
    with open(path, "wb") as fh:
        fh.write(payload)
    return hashlib.sha256(payload).hexdigest()


def load_dataset(path: Union[str, Path]) -> DomainDataset:
    """读取交换文件"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise DatasetFormatError(f"{path}: cannot read dataset: {e}") from e
    return decode_dataset(payload, source=str(path))


def file_checksum(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
