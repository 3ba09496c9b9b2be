"""
运行配置存储 - 点分键、key = value 配置文件、命令行覆盖、配置哈希

优先级: 默认值 < 配置文件 < --set key=value < 专用命令行参数
未知的键直接报错；校验失败时报出对应的点分键。
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from app.exceptions import ConfigurationError
from app.models.schemas import RunConfig

logger = logging.getLogger(__name__)

# 默认配置
DEFAULT_CONFIG = {
    "seed": {
        "value": 0,
        "description": "主种子，所有组件的随机性都由它派生"
    },
    "out_dir": {
        "value": "runs",
        "description": "输出目录"
    },
    "dataset.kind": {
        "value": "blobs",
        "description": "合成数据类型 blobs | moons"
    },
    "dataset.classes": {
        "value": 4,
        "description": "blobs 的类别数 (moons 固定为 2)"
    },
    "dataset.per_class": {
        "value": 250,
        "description": "每个域每个类别的样本数"
    },
    "dataset.noise": {
        "value": 0.3,
        "description": "高斯噪声标准差"
    },
    "dataset.rotation": {
        "value": 50.0,
        "description": "目标域旋转角度 (度)"
    },
    "dataset.scale": {
        "value": 1.0,
        "description": "目标域缩放因子"
    },
    "dataset.source_rotations": {
        "value": [0.0],
        "description": "每个源域的旋转角度，逗号分隔；多个即多源域"
    },
    "dataset.source_mode": {
        "value": "multi",
        "description": "多源域处理方式 multi (每个 cycle 选一个域) | combine (合并)"
    },
    "model.hidden": {
        "value": [64, 32],
        "description": "特征提取器各层宽度，逗号分隔"
    },
    "model.classifier_hidden": {
        "value": 32,
        "description": "两层分类器的隐藏宽度"
    },
    "model.dropout_rate": {
        "value": 0.75,
        "description": "分类器隐藏层的 dropout 比例"
    },
    "model.train_dropout": {
        "value": True,
        "description": "训练时是否使用 dropout"
    },
    "schedule.pretrain_iterations": {
        "value": 300,
        "description": "预训练迭代次数"
    },
    "schedule.pretrain_lr": {
        "value": 0.1,
        "description": "预训练学习率"
    },
    "schedule.adapt_lr": {
        "value": 0.05,
        "description": "适配阶段学习率"
    },
    "schedule.cycles": {
        "value": 30,
        "description": "适配 cycle 数 (每个 cycle 提取一次不确定性)"
    },
    "schedule.steps": {
        "value": 20,
        "description": "每个 cycle 的 SGD 步数"
    },
    "schedule.resample_period": {
        "value": 10,
        "description": "伪标签重采样间隔 (步)"
    },
    "mcd.iterations": {
        "value": 25,
        "description": "MCD 前向次数 |M| (>= 2)"
    },
    "mcd.rate": {
        "value": 0.75,
        "description": "MCD mask 的 dropout 比例"
    },
    "batch.size": {
        "value": 64,
        "description": "批次大小 |b| (源域 + 目标域)"
    },
    "batch.beta": {
        "value": 4,
        "description": "每个批次的类别数 beta (不超过类别数)"
    },
    "dss.epsilon": {
        "value": 0.25,
        "description": "标签平滑系数 epsilon"
    },
    "dss.pretrain": {
        "value": "source",
        "description": "预训练阶段平滑范围 none | source"
    },
    "dss.adapt": {
        "value": "source",
        "description": "适配阶段平滑范围 none | source | target | both"
    },
    "reweigh": {
        "value": "de+sl",
        "description": "重加权因子 none | sl | de | de+sl"
    },
}

# 哈希时排除的键 (不改变实验本身)
HASH_EXCLUDED_KEYS = ("seed", "out_dir")
# 输出目录不影响结果，不写入报告
MANIFEST_EXCLUDED_KEYS = ("out_dir",)


def _check_key(key: str, source: str = "") -> str:
    key = key.strip()
    if key not in DEFAULT_CONFIG:
        where = f" ({source})" if source else ""
        raise ConfigurationError(f"unknown configuration key{where}", key=key)
    return key


def parse_value(key: str, text: str) -> Any:
    """把文本值转成默认值对应的形状；列表按逗号拆分，标量交给 pydantic 校验"""
    text = text.strip()
    if isinstance(DEFAULT_CONFIG[key]["value"], list):
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """解析 key = value 文本，# 之后为注释"""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = _check_key(key, f"{source}:{lineno}")
        values[key] = parse_value(key, value)
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """读取配置文件"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    values = parse_config_text(text, source=str(path))
    logger.info(f"Loaded {len(values)} config values from {path}")
    return values


def parse_overrides(pairs: Optional[Iterable[str]]) -> Dict[str, Any]:
    """--set key=value 列表"""
    values: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = _check_key(key, "--set")
        values[key] = parse_value(key, value)
    return values


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        node = nested
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def _error_key(error: Mapping[str, Any]) -> str:
    return ".".join(str(part) for part in error["loc"] if not isinstance(part, int))


def build_config(*layers: Optional[Mapping[str, Any]]) -> RunConfig:
    """
    按顺序叠加各层点分键值 (后面的覆盖前面的) 并校验

    Raises:
        ConfigurationError: 未知键或校验失败，key 为对应的点分键
    """
    flat = {key: entry["value"] for key, entry in DEFAULT_CONFIG.items()}
    for layer in layers:
        for key, value in (layer or {}).items():
            if value is None:
                continue
            flat[_check_key(key)] = value
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(first["msg"], key=_error_key(first)) from e


def flatten_config(config: RunConfig) -> Dict[str, Any]:
    """RunConfig -> {点分键: JSON 值}，键序与 DEFAULT_CONFIG 相同"""
    dumped = config.model_dump(mode="json")
    flat = {}
    for key in DEFAULT_CONFIG:
        node: Any = dumped
        for part in key.split("."):
            node = node[part]
        flat[key] = node
    return flat


def manifest_config(config: RunConfig) -> Dict[str, Any]:
    """写入报告 manifest 的配置 (不含 out_dir)"""
    return {k: v for k, v in flatten_config(config).items() if k not in MANIFEST_EXCLUDED_KEYS}


def config_hash(config: RunConfig) -> str:
    """规范 JSON (排除 seed / out_dir) 的 sha256 前 16 位"""
    flat = {k: v for k, v in flatten_config(config).items() if k not in HASH_EXCLUDED_KEYS}
    canonical = json.dumps(flat, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def format_value(value: Any) -> str:
    """写回配置文件时的文本形式"""
    if isinstance(value, list):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def describe_config(config: RunConfig) -> List[Tuple[str, str, str]]:
    """(key, 生效值, 说明)，用于 show-config"""
    return [
        (key, format_value(value), DEFAULT_CONFIG[key]["description"])
        for key, value in flatten_config(config).items()
    ]


def dump_config_text(config: RunConfig) -> str:
    """生成可以再次加载的配置文件文本"""
    lines = [f"# config hash {config_hash(config)}"]
    lines.extend(f"{key} = {value}" for key, value, _ in describe_config(config))
    return "\n".join(lines) + "\n"
