"""
情景记忆
MFEC 按动作划分的回报表、NEC 可微神经字典 (DND)、kNN 检索、
逆距离核以及基于核协方差的不确定性估计
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..utils.exceptions import DomainError, EmptyStoreError, SnapshotError, UsageError
from ..utils.logger import get_logger

logger = get_logger(__name__)

SNAPSHOT_VERSION = 1
GP_JITTER = 1e-6
DEFAULT_MATCH_TOL = 1e-9

# 存储较大时先用 argpartition 缩小候选集
_PARTIAL_SELECT_FACTOR = 4


def as_key(h, dim: Optional[int] = None) -> np.ndarray:
    """校验并转换为 EmbeddingKey"""
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"键必须是一维向量，实际维度 {arr.ndim}")
    if dim is not None and arr.size != dim:
        raise DomainError(f"键维度不匹配: 期望 {dim}，实际 {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("键包含非有限值")
    return arr


def kernel(h, h_i, delta: float) -> float:
    """
    逆距离加权核 k(h, hᵢ) = 1 / (‖h − hᵢ‖² + δ)

    Raises:
        DomainError: 维度不匹配或 δ ≤ 0
    """
    h = as_key(h)
    h_i = as_key(h_i, h.size)
    if not delta > 0:
        raise DomainError(f"delta 必须为正: {delta}")
    diff = h - h_i
    return float(1.0 / (np.dot(diff, diff) + delta))


def gp_posterior_std(neighbor_keys: np.ndarray, h: np.ndarray, delta: float,
                     jitter: float = GP_JITTER) -> float:
    """
    以逆距离核为协方差的高斯过程后验标准差

    σ² = k(h,h) − kᵥᵀ(K + εI)⁻¹kᵥ，截断到 0
    """
    diffs = neighbor_keys[:, None, :] - neighbor_keys[None, :, :]
    gram = 1.0 / (np.einsum("ijk,ijk->ij", diffs, diffs) + delta)
    gram[np.diag_indices_from(gram)] += jitter
    q_diff = neighbor_keys - h
    k_vec = 1.0 / (np.einsum("ij,ij->i", q_diff, q_diff) + delta)
    try:
        solved = np.linalg.solve(gram, k_vec)
    except np.linalg.LinAlgError:
        solved = np.linalg.lstsq(gram, k_vec, rcond=None)[0]
    variance = 1.0 / delta - float(np.dot(k_vec, solved))
    return float(np.sqrt(max(variance, 0.0)))


@dataclass
class LookupResult:
    """DND 查询结果"""
    q_estimate: float
    neighbor_indices: np.ndarray
    weights: np.ndarray
    variance: float


class EpisodicBuffer:
    """
    固定容量的 (键, 值, 时间戳) 存储，提供精确 kNN 与 LRU 淘汰

    时间戳来自单调递增、从不重置的计数器。
    """

    def __init__(self, capacity: int, key_dim: int):
        if capacity < 1:
            raise DomainError(f"容量必须 ≥ 1: {capacity}")
        if key_dim < 1:
            raise DomainError(f"键维度必须 ≥ 1: {key_dim}")
        self.capacity = int(capacity)
        self.key_dim = int(key_dim)
        self.keys = np.zeros((self.capacity, self.key_dim), dtype=np.float64)
        self.values = np.zeros(self.capacity, dtype=np.float64)
        self.recency = np.zeros(self.capacity, dtype=np.int64)
        self.size = 0
        self.clock = 0

    def __len__(self) -> int:
        return self.size

    def _tick(self) -> int:
        self.clock += 1
        return self.clock

    def squared_distances(self, h: np.ndarray) -> np.ndarray:
        diff = self.keys[:self.size] - h
        return np.einsum("ij,ij->i", diff, diff)

    def knn(self, h, k: int) -> np.ndarray:
        """
        精确 kNN：按平方距离升序，距离相同时较旧（时间戳小）的优先

        Raises:
            EmptyStoreError: 存储为空
        """
        if self.size == 0:
            raise EmptyStoreError("记忆库为空，无法检索")
        if k < 1:
            raise DomainError(f"k 必须 ≥ 1: {k}")
        h = as_key(h, self.key_dim)
        dist = self.squared_distances(h)
        k = min(int(k), self.size)
        candidates = np.arange(self.size)
        if self.size > _PARTIAL_SELECT_FACTOR * k:
            part = np.argpartition(dist, k - 1)[:k]
            threshold = dist[part].max()
            candidates = np.flatnonzero(dist <= threshold)
        order = np.lexsort((self.recency[candidates], dist[candidates]))
        return candidates[order[:k]]

    def lru_slot(self) -> int:
        """最久未使用的槽位"""
        return int(np.argmin(self.recency[:self.size]))

    def _insert(self, h: np.ndarray, value: float) -> Tuple[int, Optional[np.ndarray]]:
        """插入新条目，满容量时淘汰 LRU；返回 (槽位, 被淘汰的键)"""
        evicted = None
        if self.size < self.capacity:
            slot = self.size
            self.size += 1
        else:
            slot = self.lru_slot()
            evicted = self.keys[slot].copy()
            logger.debug(f"容量已满，淘汰槽位 {slot} (时间戳 {self.recency[slot]})")
        self.keys[slot] = h
        self.values[slot] = value
        self.recency[slot] = self._tick()
        return slot, evicted

    def entries_in_recency_order(self) -> np.ndarray:
        return np.argsort(self.recency[:self.size], kind="stable")

    # 快照 -----------------------------------------------------------------

    def _snapshot_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        order = self.entries_in_recency_order()
        return {
            f"{prefix}keys": self.keys[order],
            f"{prefix}values": self.values[order],
            f"{prefix}recency": self.recency[order],
            f"{prefix}clock": np.array([self.clock], dtype=np.int64),
        }

    def _restore_arrays(self, data, prefix: str = ""):
        keys = data[f"{prefix}keys"]
        n = keys.shape[0]
        if n > self.capacity or (n and keys.shape[1] != self.key_dim):
            raise SnapshotError("快照与存储的容量或键维度不一致")
        self.keys[:] = 0.0
        self.values[:] = 0.0
        self.recency[:] = 0
        self.keys[:n] = keys
        self.values[:n] = data[f"{prefix}values"]
        self.recency[:n] = data[f"{prefix}recency"]
        self.size = n
        self.clock = int(data[f"{prefix}clock"][0])


class MFECTable:
    """
    MFEC 情景控制表：每个动作一张固定容量的表，
    精确键 → 历史最高回报，LRU 淘汰
    """

    def __init__(self, n_actions: int, capacity: int, key_dim: int, k: int = 11,
                 delta: float = 1e-3):
        if n_actions < 1:
            raise DomainError(f"动作数必须 ≥ 1: {n_actions}")
        if not delta > 0:
            raise DomainError(f"delta 必须为正: {delta}")
        self.n_actions = int(n_actions)
        self.capacity = int(capacity)
        self.key_dim = int(key_dim)
        self.k = int(k)
        self.delta = float(delta)
        self.buffers = [EpisodicBuffer(capacity, key_dim) for _ in range(self.n_actions)]
        # 按字节精确匹配的索引
        self._index: List[Dict[bytes, int]] = [{} for _ in range(self.n_actions)]

    def _check_action(self, action: int) -> EpisodicBuffer:
        if not 0 <= action < self.n_actions:
            raise DomainError(f"动作越界: {action}")
        return self.buffers[action]

    def size(self, action: int) -> int:
        return self._check_action(action).size

    def lookup_exact(self, h, action: int) -> Optional[float]:
        buf = self._check_action(action)
        slot = self._index[action].get(as_key(h, self.key_dim).tobytes())
        return None if slot is None else float(buf.values[slot])

    def estimate(self, h, action: int) -> float:
        """
        Q̂^EC(s,a)：精确命中返回存储值，否则为 k 近邻存储值的算术平均

        Raises:
            EmptyStoreError: 该动作的表为空
        """
        buf = self._check_action(action)
        if buf.size == 0:
            raise EmptyStoreError(f"动作 {action} 的 MFEC 表为空")
        h = as_key(h, self.key_dim)
        slot = self._index[action].get(h.tobytes())
        if slot is not None:
            return float(buf.values[slot])
        neighbors = buf.knn(h, self.k)
        return float(np.mean(buf.values[neighbors]))

    def update(self, h, action: int, episodic_return: float):
        """存在则取最大值并刷新时间戳，否则插入（满容量淘汰 LRU）"""
        buf = self._check_action(action)
        h = as_key(h, self.key_dim)
        raw = h.tobytes()
        slot = self._index[action].get(raw)
        if slot is not None:
            buf.values[slot] = max(buf.values[slot], float(episodic_return))
            buf.recency[slot] = buf._tick()
            return
        slot, evicted = buf._insert(h, float(episodic_return))
        if evicted is not None:
            del self._index[action][evicted.tobytes()]
        self._index[action][raw] = slot

    def uncertainty(self, h, action: int) -> float:
        """以同一核公式估计的后验标准差"""
        buf = self._check_action(action)
        if buf.size == 0:
            raise EmptyStoreError(f"动作 {action} 的 MFEC 表为空")
        h = as_key(h, self.key_dim)
        neighbors = buf.knn(h, self.k)
        return gp_posterior_std(buf.keys[neighbors], h, self.delta)

    def save(self, path: Union[str, Path]):
        arrays = {}
        for a, buf in enumerate(self.buffers):
            arrays.update(buf._snapshot_arrays(prefix=f"a{a}_"))
        _write_snapshot(path, "mfec_table", {
            "n_actions": self.n_actions, "capacity": self.capacity,
            "key_dim": self.key_dim, "k": self.k, "delta": self.delta,
        }, arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MFECTable":
        header, data = _read_snapshot(path, "mfec_table")
        table = cls(header["n_actions"], header["capacity"], header["key_dim"],
                    header["k"], header["delta"])
        for a, buf in enumerate(table.buffers):
            buf._restore_arrays(data, prefix=f"a{a}_")
            table._index[a] = {buf.keys[i].tobytes(): i for i in range(buf.size)}
        return table


class DifferentiableDictionary(EpisodicBuffer):
    """
    可微神经字典（单个动作）
    条目为 (键, Q 值, 时间戳)，读写都会刷新时间戳
    """

    def __init__(self, capacity: int, key_dim: int, k: int = 11, delta: float = 1e-3):
        super().__init__(capacity, key_dim)
        if k < 1:
            raise DomainError(f"k 必须 ≥ 1: {k}")
        if not delta > 0:
            raise DomainError(f"delta 必须为正: {delta}")
        self.k = int(k)
        self.delta = float(delta)
        self._version = 0
        self._cache: Optional[dict] = None

    def lookup(self, h, touch: bool = True, with_variance: bool = True) -> LookupResult:
        """
        核加权 kNN 读：q = Σ wᵢQᵢ，wᵢ = k(h,hᵢ)/Σk(h,hⱼ)

        Args:
            h: 查询键
            touch: 是否刷新邻居的时间戳（评估和回放训练时为 False）
            with_variance: 是否计算核协方差方差（回放训练不需要，记为 0）

        Raises:
            EmptyStoreError: 字典为空
        """
        h = as_key(h, self.key_dim)
        neighbors = self.knn(h, self.k)
        diff = h - self.keys[neighbors]
        sq_dist = np.einsum("ij,ij->i", diff, diff)
        kern = 1.0 / (sq_dist + self.delta)
        weights = kern / kern.sum()
        q_values = self.values[neighbors]
        estimate = float(np.dot(weights, q_values))
        variance = 0.0
        if with_variance:
            variance = gp_posterior_std(self.keys[neighbors], h, self.delta) ** 2

        self._cache = {
            "h": h.copy(), "neighbors": neighbors, "kernel": kern,
            "weights": weights, "estimate": estimate, "version": self._version,
        }
        if touch:
            self.recency[neighbors] = self._tick()
        return LookupResult(estimate, neighbors, weights, variance)

    def gradients(self, h, upstream: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        基于最近一次 lookup 缓存的解析梯度

        Returns:
            (dL/dh, 每个邻居的 dL/dQᵢ, 每个邻居的 dL/dhᵢ)

        Raises:
            UsageError: 缓存不存在、查询键不同或字典已被写入
        """
        cache = self._cache
        if cache is None or cache["version"] != self._version:
            raise UsageError("DND 梯度缓存已失效，请先重新 lookup")
        h = as_key(h, self.key_dim)
        if not np.array_equal(h, cache["h"]):
            raise UsageError("梯度查询键与最近一次 lookup 不一致")
        neighbors = cache["neighbors"]
        weights = cache["weights"]
        kern = cache["kernel"]
        q_values = self.values[neighbors]
        # dq/dkᵢ = (Qᵢ − q)/S，dkᵢ/dh = −2kᵢ²(h − hᵢ)
        coeff = 2.0 * weights * kern * (q_values - cache["estimate"])
        diff = h - self.keys[neighbors]
        d_keys = upstream * coeff[:, None] * diff
        d_h = -d_keys.sum(axis=0)
        d_values = upstream * weights
        return d_h, d_values, d_keys

    def write(self, h, target: float, alpha: float = 0.1,
              match_tol: float = DEFAULT_MATCH_TOL) -> int:
        """
        Q-learning 式写入：匹配到已有键则 Qᵢ ← Qᵢ + α(target − Qᵢ)，
        否则追加（满容量淘汰 LRU）

        Returns:
            int: 被写入的槽位
        """
        if not 0 < alpha <= 1:
            raise DomainError(f"alpha 必须位于 (0, 1]: {alpha}")
        h = as_key(h, self.key_dim)
        self._version += 1
        if self.size:
            dist = self.squared_distances(h)
            slot = int(np.argmin(dist))
            if dist[slot] <= match_tol:
                self.values[slot] += alpha * (float(target) - self.values[slot])
                self.recency[slot] = self._tick()
                return slot
        slot, _ = self._insert(h, float(target))
        return slot

    def apply_gradients(self, indices: np.ndarray, d_values: np.ndarray,
                        d_keys: np.ndarray, learning_rate: float):
        """对存储的键和值做一步梯度下降"""
        self._version += 1
        np.subtract.at(self.values, indices, learning_rate * d_values)
        np.subtract.at(self.keys, indices, learning_rate * d_keys)

    def save(self, path: Union[str, Path]):
        _write_snapshot(path, "dnd", {
            "capacity": self.capacity, "key_dim": self.key_dim,
            "k": self.k, "delta": self.delta,
        }, self._snapshot_arrays())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DifferentiableDictionary":
        header, data = _read_snapshot(path, "dnd")
        store = cls(header["capacity"], header["key_dim"], header["k"], header["delta"])
        store._restore_arrays(data)
        return store


# 函数式接口 ---------------------------------------------------

def knn_search(store: EpisodicBuffer, h, k: int) -> np.ndarray:
    return store.knn(h, k)


def dnd_lookup(store: DifferentiableDictionary, h) -> LookupResult:
    return store.lookup(h)


def dnd_write(store: DifferentiableDictionary, h, target: float, alpha: float,
              match_tol: float = DEFAULT_MATCH_TOL) -> None:
    store.write(h, target, alpha, match_tol)


def dnd_gradients(store: DifferentiableDictionary, h, upstream: float):
    return store.gradients(h, upstream)


def mfec_estimate(table: MFECTable, h, action: int) -> float:
    return table.estimate(h, action)


def mfec_update(table: MFECTable, h, action: int, episodic_return: float) -> None:
    table.update(h, action, episodic_return)


def estimate_uncertainty(store: DifferentiableDictionary, h) -> float:
    """
    kNN 集合上以核为协方差的后验标准差

    Raises:
        EmptyStoreError: 字典为空
    """
    h = as_key(h, store.key_dim)
    neighbors = store.knn(h, store.k)
    return gp_posterior_std(store.keys[neighbors], h, store.delta)


# 快照文件 ----------------------------------------------------------------

def _write_snapshot(path: Union[str, Path], kind: str, header: dict,
                    arrays: Dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(header, kind=kind, format_version=SNAPSHOT_VERSION)
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    logger.debug(f"快照已写入: {path} ({kind})")


def _read_snapshot(path: Union[str, Path], kind: str):
    try:
        data = np.load(Path(path), allow_pickle=False)
        header = json.loads(str(data["header"]))
    except (OSError, KeyError, ValueError) as e:
        raise SnapshotError(f"无法读取快照 {path}: {e}") from e
    if header.get("kind") != kind:
        raise SnapshotError(f"快照类型不匹配: 期望 {kind}，实际 {header.get('kind')}")
    if header.get("format_version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"不支持的快照版本: {header.get('format_version')}")
    return header, data
