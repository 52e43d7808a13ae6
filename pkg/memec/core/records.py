"""
评估记录数据模型
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

CURVE_HEADER = ("step", "seed", "mean_return", "std_return", "episodes")
AGGREGATE_HEADER = ("step", "mean", "std")
FINAL_WINDOW = 5


@dataclass(frozen=True)
class EvalRecord:
    """一个评估点：若干贪心评估回合的回报统计"""
    step: int
    seed: int
    mean_return: float
    std_return: float
    episodes: int

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError(f"评估回合数必须 ≥ 1: {self.episodes}")

    @classmethod
    def from_returns(cls, step: int, seed: int, returns: Sequence[float]) -> "EvalRecord":
        """从评估回合回报构造（总体标准差）"""
        arr = np.asarray(returns, dtype=np.float64)
        return cls(step=int(step), seed=int(seed), mean_return=float(arr.mean()),
                   std_return=float(arr.std()), episodes=int(arr.size))

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "EvalRecord":
        """从 CSV 行解析"""
        return cls.from_dict(row)

    def to_row(self) -> List[str]:
        """CSV 行；浮点数以最短可往返十进制表示输出"""
        return [str(self.step), str(self.seed), repr(self.mean_return),
                repr(self.std_return), str(self.episodes)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "seed": self.seed,
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "episodes": self.episodes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalRecord":
        return cls(step=int(data["step"]), seed=int(data["seed"]),
                   mean_return=float(data["mean_return"]), std_return=float(data["std_return"]),
                   episodes=int(data["episodes"]))

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.mean_return) and math.isfinite(self.std_return)


@dataclass(frozen=True)
class AggregatePoint:
    """跨种子聚合后的一个评估点"""
    step: int
    mean: float
    std: float

    def to_row(self) -> List[str]:
        return [str(self.step), repr(self.mean), repr(self.std)]


@dataclass(frozen=True)
class Aggregate:
    """聚合结果：逐点曲线与最终得分（最后 5 次评估的均值）"""
    points: List[AggregatePoint]
    final_score: float
    seeds: List[int]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "final_score": self.final_score,
            "seeds": list(self.seeds),
            "points": [{"step": p.step, "mean": p.mean, "std": p.std} for p in self.points],
        }
