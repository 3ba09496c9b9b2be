"""
pytest 配置

- 把项目根目录加入 sys.path
- slow 标记: 端到端验收测试，设置 UBR2S_RUN_SLOW=1 时才运行
"""

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end acceptance runs (set UBR2S_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("UBR2S_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set UBR2S_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
