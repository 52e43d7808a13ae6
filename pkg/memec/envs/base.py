"""
环境基类
所有环境共用的单步接口：reset(seed) / step(action)
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..utils.exceptions import DomainError, UsageError


@dataclass
class EnvState:
    """环境状态"""
    observation: np.ndarray
    step_count: int = 0
    done: bool = False


class Environment:
    """确定性种子化环境"""

    env_id = "base"
    episode_cap = 0
    n_actions = 0
    observation_dim = 0

    def __init__(self):
        self.state: Optional[EnvState] = None

    def action_count(self) -> int:
        return self.n_actions

    def reset(self, seed: Optional[int] = None) -> EnvState:
        raise NotImplementedError

    def _transition(self, action: int) -> Tuple[np.ndarray, float, bool]:
        """一步动力学，返回 (观测, 奖励, 是否终止)"""
        raise NotImplementedError

    def step(self, action: int) -> Tuple[EnvState, float, bool]:
        """
        执行一步；终止条件或回合上限都会结束回合

        Raises:
            UsageError: 未 reset 或回合已结束
            DomainError: 非法动作
        """
        if self.state is None:
            raise UsageError("step 之前必须先 reset")
        if self.state.done:
            raise UsageError("回合已结束，请先 reset")
        if not 0 <= int(action) < self.n_actions:
            raise DomainError(f"非法动作: {action}")
        obs, reward, terminal = self._transition(int(action))
        count = self.state.step_count + 1
        done = bool(terminal or count >= self.episode_cap)
        self.state = EnvState(obs, count, done)
        return self.state, reward, done


def action_count(env: Environment) -> int:
    return env.action_count()
