"""
环境模块
"""

from typing import Callable, Dict

from .base import Environment, EnvState, action_count
from .classic_control import Acrobot, CartPole
from .gridworld import GridLayout, GridWorld, four_room, load_layout, open_room, parse_layout
from ..utils.exceptions import ValidationError

_REGISTRY: Dict[str, Callable[[], Environment]] = {
    "cartpole": CartPole,
    "acrobot": Acrobot,
    "open_room": open_room,
    "four_room": four_room,
}


def register_env(env_id: str, factory: Callable[[], Environment]):
    """注册额外的环境（例如测试用的桩环境）"""
    _REGISTRY[env_id] = factory


def available_envs():
    return sorted(_REGISTRY)


def make_env(env_id: str) -> Environment:
    if env_id not in _REGISTRY:
        raise ValidationError(f"未知环境 {env_id!r}", keys=["experiment.env_id"])
    return _REGISTRY[env_id]()


__all__ = [
    "Environment", "EnvState", "action_count", "CartPole", "Acrobot", "GridLayout",
    "GridWorld", "open_room", "four_room", "load_layout", "parse_layout",
    "register_env", "available_envs", "make_env",
]
