"""
观测到键的映射
恒等映射、高斯随机投影、带解析反向传播的小型前馈编码器，
以及 NEC 训练用的 RMSprop 优化器和经验回放
"""

import json
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..utils.exceptions import DomainError, SnapshotError, UsageError
from ..utils.logger import get_logger

logger = get_logger(__name__)

ENCODER_SNAPSHOT_VERSION = 1

Params = Dict[str, np.ndarray]


def _check_obs(obs, in_dim: int) -> np.ndarray:
    arr = np.asarray(obs, dtype=np.float64)
    if arr.shape[-1] != in_dim or arr.ndim not in (1, 2):
        raise DomainError(f"观测维度不匹配: 期望 {in_dim}，实际形状 {arr.shape}")
    return arr


class IdentityEncoder:
    """恒等键：键就是原始观测"""

    def __init__(self, in_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = self.in_dim

    def encode(self, obs) -> np.ndarray:
        return _check_obs(obs, self.in_dim).copy()


class GaussianProjection:
    """
    高斯随机投影，矩阵元素独立同分布 N(0, 1/out_dim)

    相同的种子和形状总是得到相同的矩阵；构造后矩阵只读。
    """

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0):
        if in_dim < 1 or out_dim < 1:
            raise DomainError(f"投影维度必须为正: {in_dim} -> {out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        matrix = rng.normal(0.0, np.sqrt(1.0 / self.out_dim), size=(self.out_dim, self.in_dim))
        matrix.setflags(write=False)
        self.matrix = matrix

    def project(self, obs) -> np.ndarray:
        obs = _check_obs(obs, self.in_dim)
        return obs @ self.matrix.T

    encode = project


def project(p: GaussianProjection, obs) -> np.ndarray:
    return p.project(obs)


_ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(np.float64)),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


class FeedforwardEncoder:
    """
    前馈编码器：若干隐藏层（默认两层 64 个整流单元）加线性输出层

    参数名为 W1, b1, W2, b2, ...；前向传播缓存激活值供 backward 使用。
    """

    def __init__(self, in_dim: int, key_size: int = 64, hidden: Sequence[int] = (64, 64),
                 activation: str = "relu", seed: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        if activation not in _ACTIVATIONS:
            raise DomainError(f"未知激活函数: {activation}")
        self.in_dim = int(in_dim)
        self.out_dim = int(key_size)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.seed = seed
        if rng is None:
            rng = np.random.default_rng(seed)
        self.params: Params = {}
        sizes = (self.in_dim,) + self.hidden + (self.out_dim,)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            # Glorot 均匀初始化
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            self.params[f"b{i}"] = np.zeros(fan_out)
        self.n_layers = len(sizes) - 1
        self._cache: Optional[dict] = None

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def encode(self, obs) -> np.ndarray:
        """
        前向传播，支持单个观测 (in_dim,) 或批量 (B, in_dim)

        Raises:
            DomainError: 维度不匹配
        """
        x = _check_obs(obs, self.in_dim)
        single = x.ndim == 1
        a = np.atleast_2d(x)
        act, _ = _ACTIVATIONS[self.activation]
        inputs, pre_acts = [], []
        for i in range(1, self.n_layers + 1):
            inputs.append(a)
            z = a @ self.params[f"W{i}"].T + self.params[f"b{i}"]
            pre_acts.append(z)
            a = act(z) if i < self.n_layers else z
        self._cache = {"inputs": inputs, "pre_acts": pre_acts, "single": single}
        return a[0] if single else a

    def backward(self, dL_dkey) -> Params:
        """
        反向传播，返回每个权重和偏置的梯度（批量时为求和）

        Raises:
            UsageError: 没有缓存的前向传播
        """
        if self._cache is None:
            raise UsageError("backward 之前必须先调用 encode")
        _, act_grad = _ACTIVATIONS[self.activation]
        grad = np.atleast_2d(np.asarray(dL_dkey, dtype=np.float64))
        inputs, pre_acts = self._cache["inputs"], self._cache["pre_acts"]
        if grad.shape != pre_acts[-1].shape:
            raise DomainError(f"梯度形状不匹配: {grad.shape} vs {pre_acts[-1].shape}")
        grads: Params = {}
        for i in range(self.n_layers, 0, -1):
            if i < self.n_layers:
                grad = grad * act_grad(pre_acts[i - 1])
            grads[f"W{i}"] = grad.T @ inputs[i - 1]
            grads[f"b{i}"] = grad.sum(axis=0)
            grad = grad @ self.params[f"W{i}"]
        return grads

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params.values())

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "kind": "feedforward_encoder", "format_version": ENCODER_SNAPSHOT_VERSION,
            "in_dim": self.in_dim, "key_size": self.out_dim, "hidden": list(self.hidden),
            "activation": self.activation, "seed": self.seed,
        }
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **self.params)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FeedforwardEncoder":
        header, data = _read_snapshot(path, "feedforward_encoder")
        enc = cls(header["in_dim"], header["key_size"], header["hidden"],
                  header["activation"], seed=0)
        enc.seed = header["seed"]
        for name in enc.params:
            enc.params[name] = np.array(data[name], dtype=np.float64)
        return enc


def encode(enc: FeedforwardEncoder, obs) -> np.ndarray:
    return enc.encode(obs)


def backward(enc: FeedforwardEncoder, dL_dkey) -> Params:
    return enc.backward(dL_dkey)


def global_norm(*grad_dicts: Params) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for d in grad_dicts for g in d.values())))


class RMSprop:
    """
    RMSprop（ε 位于平方根内）

    accumulator ← ρ·accumulator + (1−ρ)·g²
    Δ = lr·g / √(accumulator + ε)
    momentum > 0 时 Δ 经过动量缓冲 buf ← m·buf + Δ
    """

    def __init__(self, learning_rate: float = 7.92e-6, rho: float = 0.95,
                 epsilon: float = 1e-2, momentum: float = 0.0):
        if learning_rate <= 0 or not 0 <= rho < 1 or epsilon <= 0 or not 0 <= momentum < 1:
            raise DomainError("RMSprop 超参数无效")
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.momentum = momentum
        self.accumulators: Params = {}
        self.momentum_buffers: Params = {}

    def step(self, params: Params, grads: Params):
        """原地更新参数"""
        for name, g in grads.items():
            if name not in params:
                raise DomainError(f"未知参数: {name}")
            p = params[name]
            if p.shape != g.shape:
                raise DomainError(f"参数 {name} 形状不匹配: {p.shape} vs {g.shape}")
            acc = self.accumulators.setdefault(name, np.zeros_like(p))
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            delta = self.learning_rate * g / np.sqrt(acc + self.epsilon)
            if self.momentum > 0:
                buf = self.momentum_buffers.setdefault(name, np.zeros_like(p))
                buf *= self.momentum
                buf += delta
                delta = buf
            p -= delta

    def save(self, path: Union[str, Path]):
        """累积量与动量缓冲按 acc_<参数名> / mom_<参数名> 存入 .npz"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "kind": "rmsprop", "format_version": ENCODER_SNAPSHOT_VERSION,
            "learning_rate": self.learning_rate, "rho": self.rho,
            "epsilon": self.epsilon, "momentum": self.momentum,
        }
        arrays = {f"acc_{name}": v for name, v in self.accumulators.items()}
        arrays.update({f"mom_{name}": v for name, v in self.momentum_buffers.items()})
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RMSprop":
        header, data = _read_snapshot(path, "rmsprop")
        opt = cls(header["learning_rate"], header["rho"], header["epsilon"], header["momentum"])
        for key in data.files:
            if key.startswith("acc_"):
                opt.accumulators[key[4:]] = np.array(data[key], dtype=np.float64)
            elif key.startswith("mom_"):
                opt.momentum_buffers[key[4:]] = np.array(data[key], dtype=np.float64)
        return opt


def _read_snapshot(path: Union[str, Path], kind: str):
    try:
        data = np.load(Path(path), allow_pickle=False)
        header = json.loads(str(data["header"]))
    except (OSError, KeyError, ValueError) as e:
        raise SnapshotError(f"无法读取快照 {path}: {e}") from e
    if header.get("kind") != kind or header.get("format_version") != ENCODER_SNAPSHOT_VERSION:
        raise SnapshotError(f"快照类型或版本不匹配: {path}")
    return header, data


def rmsprop_step(state: RMSprop, params: Params, grads: Params) -> None:
    state.step(params, grads)


class ReplayBatch(NamedTuple):
    observations: np.ndarray
    actions: np.ndarray
    returns: np.ndarray


class ReplayBuffer:
    """循环经验回放，存储 (观测, 动作, n 步回报)"""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise DomainError(f"回放容量必须 ≥ 1: {capacity}")
        self.capacity = int(capacity)
        self.observations = np.zeros((self.capacity, int(obs_dim)), dtype=np.float64)
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.returns = np.zeros(self.capacity, dtype=np.float64)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, observation, action: int, n_step_return: float):
        self.observations[self.cursor] = observation
        self.actions[self.cursor] = action
        self.returns[self.cursor] = n_step_return
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> ReplayBatch:
        """
        有放回均匀采样

        Raises:
            UsageError: 回放为空
        """
        if self.size == 0:
            raise UsageError("经验回放为空，无法采样")
        idx = rng.integers(0, self.size, size=int(batch))
        return ReplayBatch(self.observations[idx].copy(), self.actions[idx].copy(),
                           self.returns[idx].copy())

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"kind": "replay", "format_version": ENCODER_SNAPSHOT_VERSION,
                  "capacity": self.capacity, "cursor": self.cursor, "size": self.size}
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)),
                     observations=self.observations, actions=self.actions, returns=self.returns)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayBuffer":
        header, data = _read_snapshot(path, "replay")
        observations = np.array(data["observations"], dtype=np.float64)
        buf = cls(header["capacity"], observations.shape[1])
        if observations.shape[0] != buf.capacity:
            raise SnapshotError(f"回放快照形状不匹配: {path}")
        buf.observations = observations
        buf.actions = np.array(data["actions"], dtype=np.int64)
        buf.returns = np.array(data["returns"], dtype=np.float64)
        buf.cursor = int(header["cursor"])
        buf.size = int(header["size"])
        return buf


def replay_sample(buf: ReplayBuffer, batch: int, rng: np.random.Generator) -> ReplayBatch:
    return buf.sample(batch, rng)
