"""
并行执行工具
托管的工作池：独立的 (配置 × 种子) 单元并行运行
"""

import threading
import weakref
from concurrent.futures import Executor, Future, ProcessPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Optional

from ..utils.logger import configure_worker, current_level, get_logger

logger = get_logger(__name__)


class _InlineExecutor(Executor):
    """单工作者时在当前进程内顺序执行"""

    def submit(self, fn, *args, **kwargs):
        future: Future = Future()
        try:
            future.set_result(fn(*args, **kwargs))
        except BaseException as e:
            future.set_exception(e)
        return future


class ManagedWorkerPool:
    """
    托管的工作池
    workers > 1 时使用进程池（单元都是 CPU 密集型），否则在当前进程内执行
    """

    def __init__(self, max_workers: int = 1):
        self.max_workers = max(1, int(max_workers))
        if self.max_workers > 1:
            self.executor: Executor = ProcessPoolExecutor(
                max_workers=self.max_workers, initializer=configure_worker,
                initargs=(current_level(),))
        else:
            self.executor = _InlineExecutor()
        self._futures = weakref.WeakSet()
        self._lock = threading.Lock()
        self._shutdown = False
        self._failed = 0

        logger.info(f"ManagedWorkerPool 初始化: 最大工作者={self.max_workers}")

    def submit(self, fn: Callable, *args, **kwargs) -> Future:
        """提交任务"""
        if self._shutdown:
            raise RuntimeError("工作池已关闭")

        future = self.executor.submit(fn, *args, **kwargs)
        with self._lock:
            self._futures.add(future)
        future.add_done_callback(self._on_done)
        return future

    def _on_done(self, future: Future):
        """记录失败的任务，异常本身由调用方通过 future.result() 获取"""
        if future.cancelled():
            return
        if future.exception() is not None:
            with self._lock:
                self._failed += 1
            logger.error(f"工作池任务异常: {future.exception()}")

    def map_ordered(self, fn: Callable, items: Iterable[Any]) -> List[Future]:
        """为每个元素提交任务，按输入顺序返回 future"""
        return [self.submit(fn, item) for item in items]

    def shutdown(self, wait: bool = True):
        with self._lock:
            self._shutdown = True
        self.executor.shutdown(wait=wait)
        logger.info("工作池已关闭")

    def __enter__(self) -> "ManagedWorkerPool":
        return self

    def __exit__(self, *exc):
        self.shutdown()

    def get_stats(self) -> Dict[str, Any]:
        active = sum(1 for f in self._futures if not f.done())
        completed = sum(1 for f in self._futures if f.done())
        return {
            "max_workers": self.max_workers,
            "active_tasks": active,
            "completed_tasks": completed,
            "failed_tasks": self._failed,
            "is_shutdown": self._shutdown,
        }
