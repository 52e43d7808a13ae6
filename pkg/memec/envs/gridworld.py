"""
网格世界
OpenRoom 与 FourRoom，布局从纯文本地图文件加载：
'#' 墙，'.' 地面，'S' 起点，'G' 终点
"""

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .base import Environment, EnvState
from ..utils.exceptions import ConfigError

LAYOUT_DIR = Path(__file__).parent / "layouts"

# 上、下、左、右
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridLayout:
    """网格布局"""
    width: int
    height: int
    walls: np.ndarray  # (height, width) 布尔掩码
    start: Tuple[int, int]
    goal: Tuple[int, int]
    episode_cap: int

    def is_free(self, cell: Tuple[int, int]) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width and not self.walls[r, c]

    def reachable(self) -> bool:
        """起点到终点是否连通（BFS）"""
        seen = {self.start}
        frontier = deque([self.start])
        while frontier:
            r, c = frontier.popleft()
            if (r, c) == self.goal:
                return True
            for dr, dc in MOVES:
                nxt = (r + dr, c + dc)
                if nxt not in seen and self.is_free(nxt):
                    seen.add(nxt)
                    frontier.append(nxt)
        return False


def parse_layout(text: str, episode_cap: int) -> GridLayout:
    """
    解析地图文本

    Raises:
        ConfigError: 行宽不一、字符非法、缺少或重复起点/终点、终点不可达
    """
    rows = [line.rstrip("\n") for line in text.strip().splitlines()]
    if not rows:
        raise ConfigError("地图为空")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError("地图各行宽度不一致")
    walls = np.zeros((len(rows), width), dtype=bool)
    start = goal = None
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls[r, c] = True
            elif ch == "S":
                if start is not None:
                    raise ConfigError("地图包含多个起点")
                start = (r, c)
            elif ch == "G":
                if goal is not None:
                    raise ConfigError("地图包含多个终点")
                goal = (r, c)
            elif ch != ".":
                raise ConfigError(f"地图包含非法字符 {ch!r} (行 {r + 1})")
    if start is None or goal is None:
        raise ConfigError("地图必须包含一个起点 S 和一个终点 G")
    walls.setflags(write=False)
    layout = GridLayout(width, len(rows), walls, start, goal, int(episode_cap))
    if not layout.reachable():
        raise ConfigError("终点从起点不可达")
    return layout


def load_layout(path: Union[str, Path], episode_cap: int) -> GridLayout:
    return parse_layout(Path(path).read_text(encoding="utf-8"), episode_cap)


class GridWorld(Environment):
    """
    确定性网格世界：撞墙或出界原地不动，到达终点奖励 1 并结束，其余奖励 0
    观测为格子的 one-hot 编码
    """

    n_actions = 4

    def __init__(self, layout: GridLayout, env_id: str = "gridworld"):
        super().__init__()
        self.layout = layout
        self.env_id = env_id
        self.episode_cap = layout.episode_cap
        self.observation_dim = layout.width * layout.height
        self.position = layout.start

    def _observation(self) -> np.ndarray:
        obs = np.zeros(self.observation_dim, dtype=np.float64)
        r, c = self.position
        obs[r * self.layout.width + c] = 1.0
        return obs

    def reset(self, seed: Optional[int] = None) -> EnvState:
        self.position = self.layout.start
        self.state = EnvState(self._observation(), 0, False)
        return self.state

    def _transition(self, action):
        dr, dc = MOVES[action]
        nxt = (self.position[0] + dr, self.position[1] + dc)
        if self.layout.is_free(nxt):
            self.position = nxt
        at_goal = self.position == self.layout.goal
        return self._observation(), (1.0 if at_goal else 0.0), at_goal


def open_room() -> GridWorld:
    return GridWorld(load_layout(LAYOUT_DIR / "open_room.txt", episode_cap=100), "open_room")


def four_room() -> GridWorld:
    return GridWorld(load_layout(LAYOUT_DIR / "four_room.txt", episode_cap=500), "four_room")
