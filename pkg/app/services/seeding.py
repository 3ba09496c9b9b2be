"""
随机种子派生

所有随机性都来自一个主种子 (master seed)。每个组件用自己的名字
(以及 cycle / step 等序号) 与主种子一起做 sha256，得到独立的子种子，
因此任何一个模块都可以单独重放。
"""

import hashlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator]

# 子种子保留 63 位，便于写入 JSON / SQLite
_SEED_MASK = (1 << 63) - 1


def derive_seed(master: int, *parts: object) -> int:
    """sha256("master|part|...") 的前 8 字节作为子种子"""
    text = "|".join([str(int(master))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _SEED_MASK


def as_generator(seed: SeedLike) -> np.random.Generator:
    """整数种子 -> 新的 PCG64 生成器；生成器原样返回"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))
