"""
探索策略
ε-greedy（线性退火）、Boltzmann、UCB、Thompson 采样以及最大熵 mellowmax (MEMEC)
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .softmax import (
    DEFAULT_TOL,
    PolicyDistribution,
    as_value_vector,
    boltzmann_policy,
    mellowmax_policy,
)
from ..utils.exceptions import DomainError, SolverError
from ..utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class AnnealSchedule:
    """线性退火计划"""
    initial: float = 1.0
    final: float = 5e-3
    start_step: int = 5_000
    end_step: int = 25_000

    def __post_init__(self):
        if not self.initial >= self.final >= 0:
            raise DomainError(f"退火端点无效: initial={self.initial}, final={self.final}")
        if self.start_step > self.end_step:
            raise DomainError(f"退火步数无效: {self.start_step} > {self.end_step}")


def epsilon_at(sched: AnnealSchedule, step: int) -> float:
    """start_step 前为 initial，之间线性插值，end_step 后为 final"""
    if step <= sched.start_step:
        return sched.initial
    if step >= sched.end_step:
        return sched.final
    frac = (step - sched.start_step) / (sched.end_step - sched.start_step)
    return sched.initial + frac * (sched.final - sched.initial)


def sample_from(dist: PolicyDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(dist.size, p=dist.probabilities))


def _check_sigma(q: np.ndarray, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != q.shape:
        raise DomainError(f"sigma 长度不匹配: {sigma.shape} vs {q.shape}")
    if np.any(sigma < 0):
        raise DomainError("sigma 必须非负")
    return sigma


def select_greedy(q) -> int:
    """argmax，并列取最小下标"""
    return int(np.argmax(as_value_vector(q)))


def select_epsilon_greedy(q, epsilon: float, rng: np.random.Generator) -> int:
    q = as_value_vector(q)
    if not 0 <= epsilon <= 1:
        raise DomainError(f"epsilon 必须位于 [0, 1]: {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def select_boltzmann(q, beta: float, rng: np.random.Generator) -> int:
    return sample_from(boltzmann_policy(q, beta), rng)


def select_ucb(q, sigma, c: float = 1.0) -> int:
    q = as_value_vector(q)
    sigma = _check_sigma(q, sigma)
    return int(np.argmax(q + c * sigma))


def select_thompson(q, sigma, rng: np.random.Generator) -> int:
    """每个动作独立采样 Q̃ᵢ ~ N(qᵢ, σᵢ)，返回采样值的 argmax"""
    q = as_value_vector(q)
    sigma = _check_sigma(q, sigma)
    return int(np.argmax(rng.normal(q, sigma)))


def select_memec(q, omega: float, rng: np.random.Generator, tol: float = DEFAULT_TOL) -> int:
    """
    从最大熵 mellowmax 策略采样，每次决策都重新求解 β

    Raises:
        SolverError: β 求解失败
    """
    return sample_from(mellowmax_policy(q, omega, tol), rng)


class ExplorationPolicy:
    """
    训练时的动作选择策略

    optimistic_unknown 为 True 的策略以极大占位值对待尚无记忆的动作，
    保证每个新情境下每个动作都会被尝试；softmax 类策略使用已知值的均值。
    """

    kind = "base"
    optimistic_unknown = True
    needs_uncertainty = False

    def __init__(self):
        self.solver_failures = 0

    def select(self, q: np.ndarray, step: int, rng: np.random.Generator,
               sigma: Optional[np.ndarray] = None) -> int:
        raise NotImplementedError


class EpsilonGreedyPolicy(ExplorationPolicy):
    kind = "epsilon_greedy"

    def __init__(self, schedule: AnnealSchedule):
        super().__init__()
        self.schedule = schedule

    def select(self, q, step, rng, sigma=None):
        return select_epsilon_greedy(q, epsilon_at(self.schedule, step), rng)


class BoltzmannPolicy(ExplorationPolicy):
    kind = "boltzmann"
    optimistic_unknown = False

    def __init__(self, beta: float):
        super().__init__()
        self.beta = beta

    def select(self, q, step, rng, sigma=None):
        return select_boltzmann(q, self.beta, rng)


class UCBPolicy(ExplorationPolicy):
    kind = "ucb"
    needs_uncertainty = True

    def __init__(self, c: float = 1.0):
        super().__init__()
        self.c = c

    def select(self, q, step, rng, sigma=None):
        return select_ucb(q, np.zeros_like(q) if sigma is None else sigma, self.c)


class ThompsonPolicy(ExplorationPolicy):
    kind = "thompson"
    needs_uncertainty = True

    def select(self, q, step, rng, sigma=None):
        return select_thompson(q, np.zeros_like(q) if sigma is None else sigma, rng)


class MellowmaxPolicy(ExplorationPolicy):
    """MEMEC：β 求解失败时退化为贪心动作并计数"""

    kind = "mellowmax"
    optimistic_unknown = False

    def __init__(self, omega: float = 7.5, tol: float = DEFAULT_TOL):
        super().__init__()
        if not omega > 0:
            raise DomainError(f"omega 必须为正: {omega}")
        self.omega = omega
        self.tol = tol

    def select(self, q, step, rng, sigma=None):
        try:
            return select_memec(q, self.omega, rng, self.tol)
        except SolverError as e:
            self.solver_failures += 1
            logger.warning(f"β 求解失败（第 {self.solver_failures} 次），改用贪心动作: {e}")
            return select_greedy(q)


POLICY_KINDS = ("epsilon_greedy", "boltzmann", "ucb", "thompson", "mellowmax")


def build_policy(kind: str, schedule: Optional[AnnealSchedule] = None, beta: float = 1.0,
                 omega: float = 7.5, ucb_c: float = 1.0, tol: float = DEFAULT_TOL) -> ExplorationPolicy:
    """按名称构造探索策略"""
    if kind == "epsilon_greedy":
        return EpsilonGreedyPolicy(schedule or AnnealSchedule())
    if kind == "boltzmann":
        return BoltzmannPolicy(beta)
    if kind == "ucb":
        return UCBPolicy(ucb_c)
    if kind == "thompson":
        return ThompsonPolicy()
    if kind == "mellowmax":
        return MellowmaxPolicy(omega, tol)
    raise DomainError(f"未知探索策略: {kind}")
