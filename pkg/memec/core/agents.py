"""
情景控制智能体
MFEC 与 NEC 的价值估计、回合轨迹、n 步回报、回合结束写入以及 NEC 的回放训练
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .encoder import (
    FeedforwardEncoder,
    GaussianProjection,
    IdentityEncoder,
    Params,
    ReplayBuffer,
    RMSprop,
    global_norm,
)
from .memory import DifferentiableDictionary, MFECTable, estimate_uncertainty
from ..utils.exceptions import DomainError, SnapshotError, UsageError
from ..utils.logger import get_logger

logger = get_logger(__name__)

# 贪心类选择器眼中"未知"动作的占位值
OPTIMISTIC_VALUE = 1e12


@dataclass
class Transition:
    """单步经验"""
    observation: np.ndarray
    key: np.ndarray
    action: int
    reward: float
    done: bool = False


@dataclass
class EpisodeTrace:
    """一个回合的有序经验；done 只能出现在最后一步"""
    transitions: List[Transition] = field(default_factory=list)

    def append(self, transition: Transition):
        if self.complete:
            raise UsageError("回合已结束，不能继续追加经验")
        self.transitions.append(transition)

    def __len__(self) -> int:
        return len(self.transitions)

    def __getitem__(self, index: int) -> Transition:
        return self.transitions[index]

    def __iter__(self):
        return iter(self.transitions)

    @property
    def complete(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].done

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions], dtype=np.float64)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum()) if self.transitions else 0.0


@dataclass
class AgentConfig:
    """智能体超参数（默认值取自网格世界/经典控制超参数表）"""
    gamma: float = 0.99
    k: int = 11
    delta: float = 1e-3
    capacity: int = 10_000
    n_step: int = 100
    alpha: float = 0.1
    training_start: int = 1_000
    batch_size: int = 32
    replay_capacity: int = 100_000
    match_tol: float = 1e-9
    train_memory: bool = True

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise DomainError(f"gamma 必须位于 [0, 1): {self.gamma}")
        if self.k < 1 or self.capacity < 1 or self.n_step < 1 or self.batch_size < 1:
            raise DomainError("k、capacity、n_step、batch_size 必须 ≥ 1")
        if not self.delta > 0:
            raise DomainError(f"delta 必须为正: {self.delta}")
        if not 0 < self.alpha <= 1:
            raise DomainError(f"alpha 必须位于 (0, 1]: {self.alpha}")


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """从后往前累计每一步的蒙特卡洛折扣回报"""
    out = np.zeros(len(rewards), dtype=np.float64)
    running = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        running = rewards[i] + gamma * running
        out[i] = running
    return out


def episodic_return(trace: EpisodeTrace, t: int, gamma: float) -> float:
    """
    Σ_{j≥0} γʲ r_{t+j}，直到回合结束

    Raises:
        UsageError: 轨迹未结束
    """
    if not trace.complete:
        raise UsageError("轨迹尚未结束，无法计算回合回报")
    if not 0 <= t < len(trace):
        raise DomainError(f"时间步越界: {t}")
    return float(discounted_returns(trace.rewards[t:], gamma)[0])


def n_step_return(trace: EpisodeTrace, t: int, n: int, gamma: float,
                  bootstrap: Optional[np.ndarray] = None) -> float:
    """
    n 步回报：Σ_{j<m} γʲ r_{t+j}，若回合在 n 步内未结束再加 γⁿ·max_a bootstrap(a)

    Args:
        trace: 回合轨迹
        t: 起始时间步
        n: 回报视界
        gamma: 折扣因子
        bootstrap: s_{t+n} 处的 Q 值向量

    Raises:
        DomainError: t 越界
        UsageError: 需要自举却没有提供 bootstrap
    """
    length = len(trace)
    if not 0 <= t < length:
        raise DomainError(f"时间步越界: {t}")
    m = min(n, length - t)
    rewards = trace.rewards[t:t + m]
    value = float(np.dot(gamma ** np.arange(m), rewards))
    if t + n < length:
        if bootstrap is None:
            raise UsageError(f"时间步 {t} 需要 s_{{t+{n}}} 处的自举值")
        value += gamma ** n * float(np.max(bootstrap))
    return value


class EpisodicAgent:
    """情景控制智能体基类"""

    kind = "base"

    def __init__(self, n_actions: int, obs_dim: int, config: AgentConfig):
        self.n_actions = int(n_actions)
        self.obs_dim = int(obs_dim)
        self.config = config
        self.global_step = 0
        self.episodes = 0

    # 子类实现 ---------------------------------------------------------------

    def encode(self, observation) -> np.ndarray:
        raise NotImplementedError

    def action_estimates(self, key: np.ndarray, touch: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (各动作估计值, 是否已知)；未知动作的估计值为 0"""
        raise NotImplementedError

    def action_uncertainty(self, key: np.ndarray, action: int) -> float:
        raise NotImplementedError

    def end_of_episode(self, trace: EpisodeTrace):
        raise NotImplementedError

    # 公共逻辑 ---------------------------------------------------------------

    def q_values_for_key(self, key: np.ndarray, optimistic: bool = False,
                         touch: bool = True) -> np.ndarray:
        """
        每个动作一个有限的估计值

        未知动作：optimistic 时取 OPTIMISTIC_VALUE，否则取已知动作的均值
        （全部未知时为 0）。
        """
        values, known = self.action_estimates(key, touch=touch)
        if known.all():
            return values
        if optimistic:
            placeholder = OPTIMISTIC_VALUE
        else:
            placeholder = float(values[known].mean()) if known.any() else 0.0
        return np.where(known, values, placeholder)

    def q_values(self, observation, optimistic: bool = False, touch: bool = True) -> np.ndarray:
        return self.q_values_for_key(self.encode(observation), optimistic, touch)

    def uncertainties(self, key: np.ndarray) -> np.ndarray:
        """各动作的核协方差标准差；空存储记为 0"""
        return np.array([self.action_uncertainty(key, a) for a in range(self.n_actions)])

    def observe_step(self):
        self.global_step += 1

    def _state_dict(self) -> dict:
        return {"kind": self.kind, "global_step": self.global_step, "episodes": self.episodes,
                "config": asdict(self.config)}

    def _load_state_dict(self, state: dict):
        if state.get("kind") != self.kind:
            raise SnapshotError(f"检查点类型不匹配: {state.get('kind')} vs {self.kind}")
        self.global_step = int(state["global_step"])
        self.episodes = int(state["episodes"])

    def save(self, directory: Union[str, Path]):
        raise NotImplementedError

    def load(self, directory: Union[str, Path]):
        raise NotImplementedError


def q_values(agent: EpisodicAgent, observation) -> np.ndarray:
    return agent.q_values(observation)


def end_of_episode(agent: EpisodicAgent, trace: EpisodeTrace) -> None:
    agent.end_of_episode(trace)


class MFECAgent(EpisodicAgent):
    """
    模型无关情景控制
    键为原始观测或其高斯随机投影，每个动作一张回报表
    """

    kind = "mfec"

    def __init__(self, n_actions: int, obs_dim: int, config: AgentConfig,
                 projection_dim: Optional[int] = None, projection_seed: int = 0):
        super().__init__(n_actions, obs_dim, config)
        if projection_dim:
            self.encoder = GaussianProjection(obs_dim, projection_dim, seed=projection_seed)
        else:
            self.encoder = IdentityEncoder(obs_dim)
        self.table = MFECTable(n_actions, config.capacity, self.encoder.out_dim,
                               k=config.k, delta=config.delta)

    def encode(self, observation) -> np.ndarray:
        return self.encoder.encode(observation)

    def action_estimates(self, key, touch=True):
        values = np.zeros(self.n_actions)
        known = np.zeros(self.n_actions, dtype=bool)
        for a in range(self.n_actions):
            if self.table.size(a):
                values[a] = self.table.estimate(key, a)
                known[a] = True
        return values, known

    def action_uncertainty(self, key, action):
        if self.table.size(action) == 0:
            return 0.0
        return self.table.uncertainty(key, action)

    def end_of_episode(self, trace: EpisodeTrace):
        """每一步以蒙特卡洛回报更新 (key_t, a_t)"""
        if len(trace) == 0:
            return
        returns = discounted_returns(trace.rewards, self.config.gamma)
        for transition, ret in zip(trace, returns):
            self.table.update(transition.key, transition.action, ret)
        self.episodes += 1
        logger.debug(f"MFEC 回合 {self.episodes} 写入 {len(trace)} 条，回报 {returns[0]:.3f}")

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.table.save(directory / "mfec_table.npz")
        state = self._state_dict()
        if isinstance(self.encoder, GaussianProjection):
            state["projection"] = {"out_dim": self.encoder.out_dim, "seed": self.encoder.seed}
        (directory / "agent.json").write_text(json.dumps(state, indent=2, sort_keys=True),
                                              encoding="utf-8")

    def load(self, directory):
        directory = Path(directory)
        state = json.loads((directory / "agent.json").read_text(encoding="utf-8"))
        self._load_state_dict(state)
        table = MFECTable.load(directory / "mfec_table.npz")
        if table.key_dim != self.table.key_dim or table.n_actions != self.n_actions:
            raise SnapshotError("MFEC 表快照与智能体不一致")
        self.table = table


class NECAgent(EpisodicAgent):
    """
    神经情景控制
    前馈编码器产生键，每个动作一个 DND，n 步回报写入并用经验回放训练
    """

    kind = "nec"

    def __init__(self, n_actions: int, obs_dim: int, config: AgentConfig,
                 rng: np.random.Generator, key_size: int = 64, hidden=(64, 64),
                 optimizer: Optional[RMSprop] = None, clip_norm: float = 10.0):
        super().__init__(n_actions, obs_dim, config)
        self.encoder = FeedforwardEncoder(obs_dim, key_size, hidden, rng=rng)
        self.dnds = [DifferentiableDictionary(config.capacity, key_size, config.k, config.delta)
                     for _ in range(n_actions)]
        self.replay = ReplayBuffer(config.replay_capacity, obs_dim)
        self.optimizer = optimizer or RMSprop()
        self.clip_norm = clip_norm
        self.train_steps = 0

    def encode(self, observation) -> np.ndarray:
        return self.encoder.encode(observation)

    def action_estimates(self, key, touch=True):
        values = np.zeros(self.n_actions)
        known = np.zeros(self.n_actions, dtype=bool)
        for a, dnd in enumerate(self.dnds):
            if len(dnd):
                values[a] = dnd.lookup(key, touch=touch, with_variance=False).q_estimate
                known[a] = True
        return values, known

    def action_uncertainty(self, key, action):
        dnd = self.dnds[action]
        return estimate_uncertainty(dnd, key) if len(dnd) else 0.0

    def end_of_episode(self, trace: EpisodeTrace):
        """
        计算每一步的 R^(n)（自举值取写入时的字典），写入对应动作的 DND 并存入回放
        """
        if len(trace) == 0:
            return
        cfg = self.config
        length = len(trace)
        targets = []
        for t in range(length):
            bootstrap = None
            if t + cfg.n_step < length:
                bootstrap = self.q_values_for_key(trace[t + cfg.n_step].key, touch=False)
            targets.append(n_step_return(trace, t, cfg.n_step, cfg.gamma, bootstrap))
        for transition, target in zip(trace, targets):
            self.dnds[transition.action].write(transition.key, target, cfg.alpha, cfg.match_tol)
            self.replay.add(transition.observation, transition.action, target)
        self.episodes += 1
        logger.debug(f"NEC 回合 {self.episodes} 写入 {length} 条，回放大小 {len(self.replay)}")

    def ready_to_train(self) -> bool:
        return len(self.replay) > 0 and self.global_step >= self.config.training_start

    def loss_and_gradients(self, observations: np.ndarray, actions: np.ndarray,
                           targets: np.ndarray) -> Tuple[float, Params, Dict[int, tuple]]:
        """
        批量 MSE 损失及其对编码器参数、DND 键和值的梯度（不修改任何状态）

        Returns:
            (loss, 编码器梯度, {动作: (槽位, dL/dQ, dL/dkeys)})
        """
        keys = self.encoder.encode(np.atleast_2d(observations))
        batch = keys.shape[0]
        d_keys = np.zeros_like(keys)
        sq_errors = np.zeros(batch)
        memory: Dict[int, List[list]] = {}
        for i in range(batch):
            action = int(actions[i])
            dnd = self.dnds[action]
            if len(dnd) == 0:
                continue
            result = dnd.lookup(keys[i], touch=False, with_variance=False)
            error = result.q_estimate - float(targets[i])
            sq_errors[i] = error * error
            d_h, d_q, d_hi = dnd.gradients(keys[i], 2.0 * error / batch)
            d_keys[i] = d_h
            parts = memory.setdefault(action, [[], [], []])
            parts[0].append(result.neighbor_indices)
            parts[1].append(d_q)
            parts[2].append(d_hi)
        encoder_grads = self.encoder.backward(d_keys)
        memory_grads = {a: (np.concatenate(p[0]), np.concatenate(p[1]), np.concatenate(p[2]))
                        for a, p in memory.items()}
        return float(sq_errors.mean()), encoder_grads, memory_grads

    def train_step(self, rng: np.random.Generator) -> float:
        """
        从回放采样一个批次，反向传播穿过 DND 和编码器，执行一步 RMSprop

        Raises:
            UsageError: 未到训练开始步数或回放为空
        """
        if not self.ready_to_train():
            raise UsageError(f"训练尚未开始: 步数 {self.global_step} < "
                             f"{self.config.training_start} 或回放为空")
        batch = self.replay.sample(self.config.batch_size, rng)
        loss, encoder_grads, memory_grads = self.loss_and_gradients(
            batch.observations, batch.actions, batch.returns)

        mem_flat = {}
        if self.config.train_memory:
            for a, (_, d_q, d_hi) in memory_grads.items():
                mem_flat[f"q{a}"] = d_q
                mem_flat[f"h{a}"] = d_hi
        norm = global_norm(encoder_grads, mem_flat)
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        if scale != 1.0:
            for g in encoder_grads.values():
                g *= scale

        self.optimizer.step(self.encoder.params, encoder_grads)
        if self.config.train_memory:
            lr = self.optimizer.learning_rate * scale
            for a, (idx, d_q, d_hi) in memory_grads.items():
                self.dnds[a].apply_gradients(idx, d_q, d_hi, lr)
        self.train_steps += 1
        if self.train_steps % 1000 == 0:
            logger.debug(f"NEC 训练步 {self.train_steps}: loss={loss:.6g}, |g|={norm:.3g}")
        return loss

    def _state_dict(self) -> dict:
        state = super()._state_dict()
        state["train_steps"] = self.train_steps
        return state

    def save(self, directory):
        """编码器、各动作 DND、经验回放与优化器状态一并写出，载入后训练可逐位续接"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.encoder.save(directory / "encoder.npz")
        for a, dnd in enumerate(self.dnds):
            dnd.save(directory / f"dnd_{a}.npz")
        self.replay.save(directory / "replay.npz")
        self.optimizer.save(directory / "optimizer.npz")
        state = self._state_dict()
        state["clip_norm"] = self.clip_norm
        (directory / "agent.json").write_text(json.dumps(state, indent=2, sort_keys=True),
                                              encoding="utf-8")

    def load(self, directory):
        directory = Path(directory)
        state = json.loads((directory / "agent.json").read_text(encoding="utf-8"))
        self._load_state_dict(state)
        self.train_steps = int(state.get("train_steps", 0))
        self.clip_norm = float(state.get("clip_norm", self.clip_norm))
        self.encoder = FeedforwardEncoder.load(directory / "encoder.npz")
        self.dnds = [DifferentiableDictionary.load(directory / f"dnd_{a}.npz")
                     for a in range(self.n_actions)]
        self.replay = ReplayBuffer.load(directory / "replay.npz")
        self.optimizer = RMSprop.load(directory / "optimizer.npz")


def train_step(agent: NECAgent, rng: np.random.Generator) -> float:
    return agent.train_step(rng)
