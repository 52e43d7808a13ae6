"""
memec - 情景控制与最大熵 mellowmax 探索

MFEC / NEC 情景控制智能体、可插拔探索策略（ε-greedy、Boltzmann、UCB、
Thompson 采样、MEMEC）以及经典控制与网格世界上的实验运行器。
"""

__version__ = "1.0.0"

from .config.manager import ConfigManager, ExperimentConfig
from .core.harness import aggregate, export_curves, run_experiment, sweep_omega
from .core.records import EvalRecord

__all__ = [
    "ConfigManager", "ExperimentConfig", "EvalRecord",
    "run_experiment", "aggregate", "sweep_omega", "export_curves",
]
