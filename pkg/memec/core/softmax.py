"""
Softmax 数值核心
Boltzmann 算子、mellowmax 算子、最大熵 β 求解以及 Brent 求根
全部为无状态纯函数，不涉及随机数
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..utils.exceptions import DomainError, SolverError
from ..utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
BRACKET_DOUBLINGS = 60

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class RootFindResult:
    """求根结果"""
    root: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class PolicyDistribution:
    """动作上的概率分布"""
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise DomainError("策略分布必须是非空一维向量")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("策略分布包含负数或非有限值")
        if abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"策略分布之和为 {p.sum()!r}，不等于 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def size(self) -> int:
        return int(self.probabilities.size)

    def argmax(self) -> int:
        """概率最大的动作（并列取最小下标）"""
        return int(np.argmax(self.probabilities))

    def expectation(self, values: ArrayLike) -> float:
        """E_π[values]"""
        return float(np.dot(self.probabilities, as_value_vector(values)))

    def entropy(self) -> float:
        p = self.probabilities[self.probabilities > 0]
        return float(-np.sum(p * np.log(p)))


def as_value_vector(q: ArrayLike) -> np.ndarray:
    """
    校验并转换为 ValueVector（一维、非空、全部有限）

    Raises:
        DomainError: 空向量或包含 NaN/±inf
    """
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"Q 值向量必须是一维的，实际维度 {arr.ndim}")
    if arr.size == 0:
        raise DomainError("Q 值向量不能为空")
    if not np.all(np.isfinite(arr)):
        raise DomainError("Q 值向量包含非有限值")
    return arr


def _softmax_weights(q: np.ndarray, beta: float) -> np.ndarray:
    """减去最大指数后的归一化 Boltzmann 权重"""
    z = beta * q
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def boltzmann_operator(q: ArrayLike, beta: float) -> float:
    """
    Boltzmann 算子 Σ qᵢ e^{βqᵢ} / Σ e^{βqᵢ}

    Args:
        q: Q 值向量
        beta: 逆温度

    Returns:
        float: 结果位于 [min q, max q]
    """
    q = as_value_vector(q)
    if not np.isfinite(beta):
        raise DomainError(f"beta 必须有限: {beta}")
    value = float(np.dot(_softmax_weights(q, beta), q))
    return float(np.clip(value, q.min(), q.max()))


def mellowmax(q: ArrayLike, omega: float) -> float:
    """
    mellowmax 算子 log((1/n) Σ e^{ωqᵢ}) / ω

    以 log-sum-exp 计算；偏移后使用 expm1/log1p，使 ω 很小时仍保持精度。

    Raises:
        DomainError: ω = 0 或非有限
    """
    q = as_value_vector(q)
    if omega == 0 or not np.isfinite(omega):
        raise DomainError(f"omega 必须是非零有限值: {omega}")
    z = omega * q
    m = z.max()
    # log(mean(exp(z - m))) = log1p(mean(expm1(z - m)))
    lse = np.log1p(np.mean(np.expm1(z - m)))
    value = m / omega + lse / omega
    return float(np.clip(value, q.min(), q.max()))


def boltzmann_policy(q: ArrayLike, beta: float) -> PolicyDistribution:
    """
    Boltzmann 策略 pᵢ = e^{βqᵢ} / Σ e^{βqⱼ}

    Raises:
        DomainError: beta 为负或非有限
    """
    q = as_value_vector(q)
    if not np.isfinite(beta) or beta < 0:
        raise DomainError(f"beta 必须是非负有限值: {beta}")
    return PolicyDistribution(_softmax_weights(q, beta))


def brent_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    xtol: Optional[float] = None,
) -> RootFindResult:
    """
    Brent 方法求标量函数在区间 [lo, hi] 内的根

    组合二分、割线与逆二次插值。当 |f(root)| ≤ tol 或区间半宽 ≤ xtol
    （默认与 tol 相同）时收敛。

    Args:
        f: 连续标量函数
        lo: 区间下界
        hi: 区间上界
        tol: 残差容差
        max_iter: 最大迭代次数
        xtol: 区间宽度容差

    Returns:
        RootFindResult

    Raises:
        DomainError: f(lo)·f(hi) > 0 或 tol ≤ 0
        SolverError: 超过最大迭代次数
    """
    if tol <= 0:
        raise DomainError(f"tol 必须为正: {tol}")
    xtol = tol if xtol is None else xtol
    eps = np.finfo(float).eps

    a, b = float(lo), float(hi)
    fa, fb = float(f(a)), float(f(b))

    if fa * fb > 0:
        raise DomainError(f"区间端点同号: f({a})={fa}, f({b})={fb}")

    if fa == 0:
        return RootFindResult(root=a, iterations=0, residual=fa)
    if fb == 0:
        return RootFindResult(root=b, iterations=0, residual=fb)

    # 保持 |f(b)| <= |f(a)|，b 为当前最优估计
    if abs(fa) < abs(fb):
        a, b = b, a
        fa, fb = fb, fa

    c, fc = a, fa
    d = e = b - a

    for iteration in range(1, max_iter + 1):
        step_tol = 2.0 * eps * abs(b) + 0.5 * xtol
        m = 0.5 * (c - b)

        if abs(fb) <= tol or abs(m) <= step_tol:
            return RootFindResult(root=b, iterations=iteration - 1, residual=fb)

        if abs(e) >= step_tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                # 割线
                p = 2.0 * m * s
                q = 1.0 - s
            else:
                # 逆二次插值
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)

            if p > 0:
                q = -q
            else:
                p = -p

            if 2.0 * p < min(3.0 * m * q - abs(step_tol * q), abs(e * q)):
                e = d
                d = p / q
            else:
                d = m
                e = m
        else:
            d = m
            e = m

        a, fa = b, fb
        if abs(d) > step_tol:
            b = b + d
        else:
            b = b + (step_tol if m > 0 else -step_tol)
        fb = float(f(b))

        # 保持 f(b) 与 f(c) 异号
        if fb * fc > 0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb

    bracket = (min(b, c), max(b, c))
    raise SolverError(f"Brent 方法在 {max_iter} 次迭代内未收敛", bracket=bracket,
                      iterations=max_iter)


def entropy_residual(q: np.ndarray, beta: float, target: float) -> float:
    """归一化权重下的根方程残差 E_π[Q] − target"""
    return float(np.dot(_softmax_weights(q, beta), q) - target)


def max_entropy_beta(q: ArrayLike, omega: float, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> RootFindResult:
    """
    求解最大熵 mellowmax 策略的逆温度 β

    解 Σ_a e^{β(Q−mm_ω(Q))}(Q − mm_ω(Q)) = 0；按 softmax 权重归一化后等价于
    E_π[Q] = mm_ω(Q)。初始区间 [−1, 1]/max(1, range(q))，残差不变号时
    区间最多加倍 60 次。

    Raises:
        DomainError: omega ≤ 0 或 tol ≤ 0
        SolverError: 区间扩张耗尽，携带最后的区间
    """
    q = as_value_vector(q)
    if not omega > 0:
        raise DomainError(f"omega 必须为正: {omega}")
    if tol <= 0:
        raise DomainError(f"tol 必须为正: {tol}")

    spread = float(q.max() - q.min())
    if spread == 0.0:
        # 常数向量：任意 β 都是根，取 β = 0
        return RootFindResult(root=0.0, iterations=0, residual=0.0)

    target = mellowmax(q, omega)

    def residual(beta: float) -> float:
        return entropy_residual(q, beta, target)

    r0 = residual(0.0)
    if abs(r0) <= tol:
        return RootFindResult(root=0.0, iterations=0, residual=r0)

    scale = 1.0 / max(1.0, spread)
    lo, hi = -scale, scale
    f_lo, f_hi = residual(lo), residual(hi)
    doublings = 0
    while f_lo * f_hi > 0:
        if doublings >= BRACKET_DOUBLINGS:
            raise SolverError(f"β 区间扩张 {BRACKET_DOUBLINGS} 次后残差仍未变号",
                              bracket=(lo, hi), iterations=doublings)
        lo, hi = 2.0 * lo, 2.0 * hi
        f_lo, f_hi = residual(lo), residual(hi)
        doublings += 1

    # 残差对 β 单调不减且 residual(0) < 0，根必在 [0, hi]
    if r0 < 0 <= f_hi:
        lo = 0.0

    result = brent_root(residual, lo, hi, tol=tol, max_iter=max_iter, xtol=1e-14 * scale)
    logger.debug(f"β 求解完成: β={result.root:.6g}, 迭代={result.iterations}, "
                 f"扩张={doublings}, 残差={result.residual:.3g}")
    return result


def mellowmax_policy(q: ArrayLike, omega: float, tol: float = DEFAULT_TOL) -> PolicyDistribution:
    """
    最大熵 mellowmax 策略：以状态相关的 β* 构造 Boltzmann 策略

    Raises:
        SolverError: β 求解失败
    """
    q = as_value_vector(q)
    beta = max(max_entropy_beta(q, omega, tol).root, 0.0)
    return boltzmann_policy(q, beta)
