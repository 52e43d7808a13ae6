"""
配置管理器
负责实验配置的默认值、预设、文件加载、命令行覆盖与校验
"""

import copy
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from ..core.agents import AgentConfig
from ..core.exploration import POLICY_KINDS, AnnealSchedule
from ..utils.exceptions import ConfigError, ValidationError
from ..utils.logger import get_logger

logger = get_logger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
AGENT_KINDS = ("mfec", "nec")
SECTIONS = ("experiment", "agent", "encoder", "exploration", "logging")


@dataclass
class ExperimentSection:
    """实验流程相关配置"""
    env_id: str = "cartpole"
    agent: str = "mfec"
    total_steps: int = 100_000
    eval_interval: int = 500
    eval_episodes: int = 5
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "results"
    workers: int = 1
    checkpoint: bool = True


@dataclass
class EncoderSection:
    """编码器与优化器配置"""
    projection_dim: Optional[int] = None
    key_size: int = 64
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    learning_rate: float = 7.92e-6
    rho: float = 0.95
    epsilon: float = 1e-2
    momentum: float = 0.0
    clip_norm: float = 10.0


@dataclass
class ExplorationSection:
    """探索策略配置"""
    kind: str = "epsilon_greedy"
    epsilon_initial: float = 1.0
    epsilon_final: float = 5e-3
    anneal_start: int = 5_000
    anneal_end: int = 25_000
    beta: float = 1.0
    omega: float = 7.5
    ucb_c: float = 1.0
    tol: float = 1e-8

    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.epsilon_initial, self.epsilon_final,
                              self.anneal_start, self.anneal_end)


@dataclass
class LoggingConfig:
    """日志相关配置"""
    level: str = "INFO"
    file: str = ""  # 为空表示不记录到文件
    backup_count: int = 5


@dataclass
class ExperimentConfig:
    """完整的、已解析的实验配置"""
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    agent: AgentConfig = field(default_factory=AgentConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    exploration: ExplorationSection = field(default_factory=ExplorationSection)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def replace(self, overrides: Dict[str, Any]) -> "ExperimentConfig":
        """以点分键覆盖后重新校验，返回新配置"""
        return ConfigManager().from_dict(self.to_dict(), overrides)


def _default_config() -> Dict[str, Any]:
    return {
        "experiment": asdict(ExperimentSection()),
        "agent": asdict(AgentConfig()),
        "encoder": asdict(EncoderSection()),
        "exploration": asdict(ExplorationSection()),
        "logging": asdict(LoggingConfig()),
    }


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


class ConfigManager:
    """配置管理器：默认值 → 预设 → 配置文件 → 覆盖项"""

    def __init__(self, preset_dirs: Optional[List[Path]] = None):
        dirs = list(preset_dirs or [])
        if env_dir := os.environ.get("MEMEC_CONFIG_DIR"):
            dirs.append(Path(env_dir))
        dirs.append(PRESET_DIR)
        self.preset_dirs = dirs

    @staticmethod
    def _deep_merge(default: Dict[str, Any], user: Dict[str, Any]) -> Dict[str, Any]:
        """深度合并配置字典"""
        merged = copy.deepcopy(default)
        for key, value in user.items():
            if key in merged and isinstance(merged[key], dict) and isinstance(value, dict):
                merged[key] = ConfigManager._deep_merge(merged[key], value)
            else:
                merged[key] = copy.deepcopy(value)
        return merged

    @staticmethod
    def _apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
        """应用 "section.key" 形式的覆盖项"""
        data = copy.deepcopy(data)
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if not key:
                raise ValidationError("覆盖项必须是 section.key 形式", keys=[dotted])
            data.setdefault(section, {})[key] = value
        return data

    def available_presets(self) -> List[str]:
        names = set()
        for d in self.preset_dirs:
            if d.is_dir():
                names.update(p.stem for p in d.glob("*.yaml"))
        return sorted(names)

    def load_preset(self, name: str) -> Dict[str, Any]:
        for d in self.preset_dirs:
            path = d / f"{name}.yaml"
            if path.exists():
                return self._read_yaml(path)
        raise ValidationError(f"未知预设 {name!r}", keys=["preset"])

    @staticmethod
    def _read_yaml(path: Path) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件顶层必须是映射: {path}")
        return data

    def read_document(self, path: Union[str, Path]) -> Dict[str, Any]:
        """读取未合并默认值的原始配置文档"""
        return self._read_yaml(Path(path))

    def load(self, path: Optional[Union[str, Path]] = None,
             overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """
        加载配置文件（YAML，也接受 JSON）

        Raises:
            ConfigError: 文件不可读
            ValidationError: 值非法，列出全部出错的键
        """
        document = self._read_yaml(Path(path)) if path else {}
        config = self.from_dict(document, overrides)
        if path:
            logger.info(f"已加载配置文件: {path}")
        return config

    def from_dict(self, document: Dict[str, Any],
                  overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        document = copy.deepcopy(document)
        merged = _default_config()
        preset = document.pop("preset", None)
        defaults_layer = document.pop("defaults", None)
        if preset:
            merged = self._deep_merge(merged, self.load_preset(preset))
        if defaults_layer:
            merged = self._deep_merge(merged, defaults_layer)
        merged = self._deep_merge(merged, document)
        if overrides:
            merged = self._apply_overrides(merged, overrides)
        self.validate(merged)
        return ExperimentConfig(
            experiment=ExperimentSection(**merged["experiment"]),
            agent=AgentConfig(**merged["agent"]),
            encoder=EncoderSection(**merged["encoder"]),
            exploration=ExplorationSection(**merged["exploration"]),
            logging=LoggingConfig(**merged["logging"]),
        )

    def validate(self, data: Dict[str, Any]):
        """
        校验合并后的配置字典

        Raises:
            ValidationError: 列出全部出错的键
        """
        from ..envs import available_envs

        bad: List[str] = []
        known = {
            "experiment": {f.name for f in fields(ExperimentSection)},
            "agent": {f.name for f in fields(AgentConfig)},
            "encoder": {f.name for f in fields(EncoderSection)},
            "exploration": {f.name for f in fields(ExplorationSection)},
            "logging": {f.name for f in fields(LoggingConfig)},
        }
        for section, value in data.items():
            if section not in known:
                bad.append(section)
                continue
            if not isinstance(value, dict):
                bad.append(section)
                continue
            bad.extend(f"{section}.{k}" for k in value if k not in known[section])
        if bad:
            raise ValidationError("未知的配置项", keys=bad)

        def check(ok: bool, key: str):
            if not ok:
                bad.append(key)

        exp = data["experiment"]
        check(exp["env_id"] in available_envs(), "experiment.env_id")
        check(exp["agent"] in AGENT_KINDS, "experiment.agent")
        check(_is_int(exp["total_steps"]) and exp["total_steps"] >= 1, "experiment.total_steps")
        check(_is_int(exp["eval_interval"]) and 1 <= exp["eval_interval"]
              and (not _is_int(exp["total_steps"]) or exp["eval_interval"] <= exp["total_steps"]),
              "experiment.eval_interval")
        check(_is_int(exp["eval_episodes"]) and exp["eval_episodes"] >= 1, "experiment.eval_episodes")
        seeds = exp["seeds"]
        check(isinstance(seeds, list) and len(seeds) > 0 and all(_is_int(s) and s >= 0 for s in seeds)
              and len(set(seeds)) == len(seeds), "experiment.seeds")
        check(_is_int(exp["workers"]) and exp["workers"] >= 1, "experiment.workers")
        check(isinstance(exp["output_dir"], str) and bool(exp["output_dir"]), "experiment.output_dir")
        check(isinstance(exp["checkpoint"], bool), "experiment.checkpoint")

        ag = data["agent"]
        check(_is_num(ag["gamma"]) and 0 <= ag["gamma"] < 1, "agent.gamma")
        for key in ("k", "capacity", "n_step", "batch_size", "replay_capacity"):
            check(_is_int(ag[key]) and ag[key] >= 1, f"agent.{key}")
        check(_is_num(ag["delta"]) and ag["delta"] > 0, "agent.delta")
        check(_is_num(ag["alpha"]) and 0 < ag["alpha"] <= 1, "agent.alpha")
        check(_is_int(ag["training_start"]) and ag["training_start"] >= 0, "agent.training_start")
        check(_is_num(ag["match_tol"]) and ag["match_tol"] >= 0, "agent.match_tol")
        check(isinstance(ag["train_memory"], bool), "agent.train_memory")

        enc = data["encoder"]
        check(enc["projection_dim"] is None or (_is_int(enc["projection_dim"]) and enc["projection_dim"] >= 1),
              "encoder.projection_dim")
        check(_is_int(enc["key_size"]) and enc["key_size"] >= 1, "encoder.key_size")
        check(isinstance(enc["hidden"], list) and all(_is_int(h) and h >= 1 for h in enc["hidden"]),
              "encoder.hidden")
        check(_is_num(enc["learning_rate"]) and enc["learning_rate"] > 0, "encoder.learning_rate")
        check(_is_num(enc["rho"]) and 0 <= enc["rho"] < 1, "encoder.rho")
        check(_is_num(enc["epsilon"]) and enc["epsilon"] > 0, "encoder.epsilon")
        check(_is_num(enc["momentum"]) and 0 <= enc["momentum"] < 1, "encoder.momentum")
        check(_is_num(enc["clip_norm"]) and enc["clip_norm"] > 0, "encoder.clip_norm")

        ex = data["exploration"]
        check(ex["kind"] in POLICY_KINDS, "exploration.kind")
        check(_is_num(ex["epsilon_initial"]) and _is_num(ex["epsilon_final"])
              and 1 >= ex["epsilon_initial"] >= ex["epsilon_final"] >= 0, "exploration.epsilon_final")
        check(_is_int(ex["anneal_start"]) and _is_int(ex["anneal_end"])
              and 0 <= ex["anneal_start"] <= ex["anneal_end"], "exploration.anneal_end")
        check(_is_num(ex["beta"]) and ex["beta"] >= 0, "exploration.beta")
        check(_is_num(ex["omega"]) and ex["omega"] > 0, "exploration.omega")
        check(_is_num(ex["ucb_c"]) and ex["ucb_c"] >= 0, "exploration.ucb_c")
        check(_is_num(ex["tol"]) and ex["tol"] > 0, "exploration.tol")

        log = data["logging"]
        check(isinstance(log["level"], str)
              and isinstance(logging.getLevelName(log["level"].upper()), int), "logging.level")

        if bad:
            raise ValidationError("配置校验失败", keys=bad)

    def save(self, config: ExperimentConfig, path: Union[str, Path]):
        """保存已解析的配置"""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                yaml.safe_dump(config.to_dict(), f, default_flow_style=False,
                               allow_unicode=True, indent=2, sort_keys=True)
            logger.info(f"配置已保存: {path}")
        except OSError as e:
            logger.error(f"保存配置失败: {e}")
            raise ConfigError(f"无法写入配置 {path}: {e}") from e
