"""
自定义异常类
"""

from typing import Iterable, Optional, Tuple


class EpisodicControlError(Exception):
    """基础异常类"""
    pass


class ConfigError(EpisodicControlError):
    """配置相关异常"""
    pass


class ValidationError(ConfigError):
    """配置数据验证异常，携带出错的配置键"""

    def __init__(self, message: str, keys: Iterable[str] = ()):
        self.keys = list(keys)
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)


class DomainError(EpisodicControlError, ValueError):
    """数值前置条件不满足（空向量、ω = 0、无效区间、维度不匹配等）"""
    pass


class SolverError(EpisodicControlError):
    """求根失败异常"""

    def __init__(self, message: str, bracket: Optional[Tuple[float, float]] = None,
                 iterations: int = 0):
        self.bracket = bracket
        self.iterations = iterations
        super().__init__(message)


class EmptyStoreError(EpisodicControlError):
    """在空记忆库上查询"""
    pass


class UsageError(EpisodicControlError):
    """调用顺序或状态错误"""
    pass


class SnapshotError(EpisodicControlError):
    """快照文件读写异常"""
    pass


class RunFailure(EpisodicControlError):
    """一个或多个实验单元运行失败，携带逐单元的失败清单"""

    def __init__(self, message: str, failures: Optional[list] = None):
        self.failures = list(failures or [])
        super().__init__(message)


class RecordsError(EpisodicControlError):
    """评估记录为空，或各种子的评估步不一致"""
    pass
