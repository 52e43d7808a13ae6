"""
pytest 公共配置
耗时的验收测试标记为 slow，仅在设置 MEMEC_RUN_SLOW=1 时运行；
另外注册两个测试用的桩环境
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memec.envs import Environment, EnvState, register_env


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 长时间运行的验收测试（MEMEC_RUN_SLOW=1 时启用）")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MEMEC_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="设置 MEMEC_RUN_SLOW=1 以运行验收测试")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class StubBandit(Environment):
    """单步回合：四种观测之一，动作 1 奖励 1，动作 0 奖励 0"""

    env_id = "stub_bandit"
    episode_cap = 1
    n_actions = 2
    observation_dim = 2

    def reset(self, seed=None):
        rng = np.random.default_rng(seed)
        self.state = EnvState(rng.integers(0, 2, size=2).astype(np.float64), 0, False)
        return self.state

    def _transition(self, action):
        return self.state.observation.copy(), float(action == 1), True


class BrokenEnv(StubBandit):
    env_id = "stub_broken"

    def _transition(self, action):
        raise RuntimeError("simulated dynamics failure")


register_env("stub_bandit", StubBandit)
register_env("stub_broken", BrokenEnv)


@pytest.fixture
def stub_document(tmp_path):
    """在桩环境上快速运行的实验配置"""
    return {
        "experiment": {
            "env_id": "stub_bandit",
            "agent": "mfec",
            "total_steps": 200,
            "eval_interval": 100,
            "eval_episodes": 3,
            "seeds": [0, 1],
            "output_dir": str(tmp_path / "out"),
        },
        "exploration": {"kind": "epsilon_greedy"},
    }
