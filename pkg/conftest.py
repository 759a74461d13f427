"""
测试公共夹具 - 小型网络、默认配置，以及慢速测试使用的完整训练模型
"""

import logging
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from autodiff_engine import init_model, load_model
from napinn import sample_collocation, train_default
from p2f_config import P2FConfig
from tank_model import DomainBounds, TankNetworkConfig

logger = logging.getLogger(__name__)

SLOW_ENV_VAR = 'P2F_SLOW_TESTS'
MODEL_ENV_VAR = 'P2F_MODEL'


def pytest_collection_modifyitems(config, items):
    if os.environ.get(SLOW_ENV_VAR) == '1':
        return
    skip_slow = pytest.mark.skip(reason=f"需要完整训练，设置 {SLOW_ENV_VAR}=1 启用")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def physics():
    return TankNetworkConfig()


@pytest.fixture
def bounds():
    return DomainBounds()


@pytest.fixture
def small_model(bounds):
    return init_model((3, 8, 8, 1), bounds, seed=7)


@pytest.fixture
def zero_model(bounds):
    model = init_model((3, 8, 1), bounds, seed=0)
    return model.with_flat(np.zeros(model.n_params))


@pytest.fixture
def small_batch(bounds):
    return sample_collocation(8, bounds, 0.1, 0.1, seed=3)


@pytest.fixture(scope='session')
def trained_model():
    """默认配置的完整训练模型；设置 P2F_MODEL 时直接加载"""
    path = os.environ.get(MODEL_ENV_VAR)
    if path:
        return load_model(path)
    config = P2FConfig()
    logger.info("会话内训练默认配置模型（耗时较长）")
    model, _ = train_default(config.network, config.bounds, config.collocation, config.train)
    return model
