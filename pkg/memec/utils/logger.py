"""
日志工具
主进程写控制台与可选的轮转文件；工作进程只写控制台，格式中带进程名
"""

import sys
import logging
import logging.handlers
from pathlib import Path
from typing import Optional

ROOT_LOGGER = "memec"
LOG_FORMAT = "%(asctime)s - %(processName)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
MAX_LOG_BYTES = 10 * 1024 * 1024


def _level(level: str) -> int:
    return getattr(logging, str(level).upper(), logging.INFO)


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    # 控制台只显示警告及以上级别，调试模式除外
    handler.setLevel(logging.DEBUG if level == logging.DEBUG else logging.WARNING)
    return handler


def _reset(logger: logging.Logger):
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def setup_logger(name: str = ROOT_LOGGER, level: str = "INFO", log_file: Optional[Path] = None,
                 backup_count: int = 5) -> logging.Logger:
    """
    配置 memec 日志记录器，重复调用会替换已有的处理器

    Args:
        name: 日志记录器名称
        level: 日志级别
        log_file: 日志文件路径，为 None 时只输出到控制台
        backup_count: 轮转日志保留份数
    """
    numeric = _level(level)
    logger = logging.getLogger(name)
    _reset(logger)
    logger.setLevel(numeric)
    logger.propagate = False
    logger.addHandler(_console_handler(numeric))

    if log_file:
        try:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                log_file, maxBytes=MAX_LOG_BYTES, backupCount=backup_count, encoding="utf-8")
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
            file_handler.setLevel(numeric)
            logger.addHandler(file_handler)
        except OSError as e:
            logger.warning(f"无法设置文件日志: {e}")

    return logger


def configure_worker(level: int):
    """工作进程初始化：多个进程不共享同一个轮转文件"""
    logger = logging.getLogger(ROOT_LOGGER)
    _reset(logger)
    logger.setLevel(level)
    logger.propagate = False
    logger.addHandler(_console_handler(level))


def current_level() -> int:
    return logging.getLogger(ROOT_LOGGER).getEffectiveLevel()


def get_logger(name: str = ROOT_LOGGER) -> logging.Logger:
    return logging.getLogger(name)
