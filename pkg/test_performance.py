#!/usr/bin/env python3
"""
性能基准测试
mellowmax 性质套件、β 求解、记忆查询与工作者池的耗时
"""

import time
import sys
import statistics
from pathlib import Path

import numpy as np

# 添加项目根目录到 Python 路径
sys.path.insert(0, str(Path(__file__).parent))

from memec.core.memory import DifferentiableDictionary, MFECTable, dnd_lookup, mfec_estimate
from memec.core.performance import ManagedWorkerPool
from memec.core.softmax import mellowmax, mellowmax_policy


def _random_vectors(rng, count):
    for _ in range(count):
        n = int(rng.integers(2, 11))
        yield rng.uniform(-100.0, 100.0, size=n), float(rng.uniform(1e-3, 100.0))


def test_mellowmax_suite_speed():
    """10,000 个随机向量上的性质检查应在 5 秒内完成"""
    print("\n=== mellowmax 性质套件 ===")
    rng = np.random.default_rng(0)
    start = time.time()
    for q, omega in _random_vectors(rng, 10_000):
        value = mellowmax(q, omega)
        assert q.min() - 1e-9 <= value <= q.max() + 1e-9
    elapsed = time.time() - start
    print(f"   耗时: {elapsed:.3f}秒")
    assert elapsed < 5.0


def test_beta_solve_speed():
    """1,000 次 β 求解"""
    print("\n=== 最大熵 β 求解 ===")
    rng = np.random.default_rng(1)
    times = []
    for q, omega in _random_vectors(rng, 1_000):
        start = time.time()
        mellowmax_policy(q, omega)
        times.append(time.time() - start)
    print(f"   平均: {statistics.mean(times) * 1e3:.3f}毫秒")
    print(f"   最慢: {max(times) * 1e3:.3f}毫秒")
    assert sum(times) < 10.0


def test_memory_lookup_speed():
    """满容量存储上的查询耗时"""
    print("\n=== 记忆查询 ===")
    rng = np.random.default_rng(2)
    dnd = DifferentiableDictionary(10_000, 64, k=50)
    for _ in range(10_000):
        dnd.write(rng.normal(size=64), float(rng.normal()))
    table = MFECTable(2, 10_000, 64)
    for _ in range(10_000):
        table.update(rng.normal(size=64), int(rng.integers(2)), float(rng.normal()))

    queries = rng.normal(size=(200, 64))
    start = time.time()
    for h in queries:
        dnd_lookup(dnd, h)
    dnd_elapsed = time.time() - start
    start = time.time()
    for h in queries:
        mfec_estimate(table, h, 0)
    mfec_elapsed = time.time() - start
    print(f"   DND 查询 200 次: {dnd_elapsed:.3f}秒")
    print(f"   MFEC 估计 200 次: {mfec_elapsed:.3f}秒")
    assert dnd_elapsed < 5.0 and mfec_elapsed < 5.0


def _busy_task(n):
    """模拟计算任务"""
    rng = np.random.default_rng(n)
    return float(np.linalg.norm(rng.normal(size=(200, 200)) @ rng.normal(size=200)))


def test_worker_pool():
    """内联与进程池执行结果一致"""
    print("\n=== 工作者池 ===")
    start = time.time()
    with ManagedWorkerPool(1) as pool:
        inline = [f.result() for f in [pool.submit(_busy_task, i) for i in range(8)]]
    elapsed_inline = time.time() - start
    print(f"   内联执行: {elapsed_inline:.3f}秒")

    start = time.time()
    with ManagedWorkerPool(2) as pool:
        parallel = [f.result() for f in pool.map_ordered(_busy_task, range(8))]
        stats = pool.get_stats()
    elapsed_parallel = time.time() - start
    print(f"   进程池执行: {elapsed_parallel:.3f}秒")
    print(f"   完成任务: {stats['completed_tasks']}, 失败任务: {stats['failed_tasks']}")

    assert parallel == inline
    assert stats["failed_tasks"] == 0


def main():
    """主测试函数"""
    print("=" * 60)
    print("       memec - 性能基准测试")
    print("=" * 60)

    try:
        test_mellowmax_suite_speed()
        test_beta_solve_speed()
        test_memory_lookup_speed()
        test_worker_pool()

        print("\n" + "=" * 60)
        print("                    测试完成")
        print("=" * 60)
    except Exception as e:
        print(f"\n❌ 测试失败: {e}")
        import traceback
        traceback.print_exc()
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
