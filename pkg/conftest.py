import os
import sys

import numpy as np
import pytest

# 将项目根目录添加到 Python 路径中，确保可以导入 sola_engine 和 harness
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

from sola_engine.src.schedule import load_preset


@pytest.fixture
def rng():
    """固定种子的随机数生成器"""
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def micro_cfg():
    """桌面规模的混合配置：L/L/LSL/LS，维度 8/8/16/16"""
    return load_preset("micro")


@pytest.fixture(scope="session")
def tiny_cfg():
    return load_preset("sola_t")
