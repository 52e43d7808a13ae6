"""
配置管理测试
"""

import json
import sys
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from memec.config.manager import ConfigManager, ExperimentConfig
from memec.utils.exceptions import ConfigError, ValidationError


@pytest.fixture
def manager():
    return ConfigManager()


def _write(path: Path, data) -> Path:
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


class TestDefaults:

    def test_builtin_defaults(self, manager):
        config = manager.load()
        assert config.experiment.env_id == "cartpole"
        assert config.experiment.total_steps == 100_000
        assert config.experiment.eval_interval == 500
        assert config.experiment.eval_episodes == 5
        assert config.experiment.seeds == [0, 1, 2]
        assert config.agent.k == 11 and config.agent.gamma == 0.99
        assert config.encoder.learning_rate == pytest.approx(7.92e-6)
        assert config.exploration.omega == 7.5

    def test_presets_available(self, manager):
        assert {"classic_control", "gridworld"} <= set(manager.available_presets())

    def test_gridworld_preset_capacity(self, manager):
        config = manager.from_dict({"preset": "gridworld"})
        assert config.agent.capacity == 150
        assert config.experiment.env_id == "open_room"

    def test_classic_control_preset(self, manager):
        config = manager.from_dict({"preset": "classic_control", "experiment": {"env_id": "acrobot"}})
        assert config.agent.capacity == 10_000
        assert config.exploration.epsilon_final == pytest.approx(0.005)

    def test_unknown_preset(self, manager):
        with pytest.raises(ValidationError):
            manager.from_dict({"preset": "atari"})


class TestMerging:

    def test_merge_order(self, manager):
        document = {
            "preset": "gridworld",
            "defaults": {"agent": {"k": 5, "capacity": 99}},
            "agent": {"k": 7},
        }
        config = manager.from_dict(document, {"agent.k": 9})
        assert config.agent.k == 9
        assert config.agent.capacity == 99
        assert config.experiment.env_id == "open_room"

    def test_overrides_require_section(self, manager):
        with pytest.raises(ValidationError):
            manager.from_dict({}, {"seeds": [1]})

    def test_json_document(self, manager, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"experiment": {"agent": "nec", "seeds": [4]}}), encoding="utf-8")
        config = manager.load(path)
        assert config.experiment.agent == "nec" and config.experiment.seeds == [4]

    def test_extra_preset_directory(self, tmp_path, monkeypatch):
        _write(tmp_path / "tiny.yaml", {"experiment": {"total_steps": 10, "eval_interval": 5}})
        monkeypatch.setenv("MEMEC_CONFIG_DIR", str(tmp_path))
        config = ConfigManager().from_dict({"preset": "tiny"})
        assert config.experiment.total_steps == 10

    def test_replace(self, manager):
        config = manager.load()
        changed = config.replace({"exploration.omega": 9.0})
        assert changed.exploration.omega == 9.0
        assert config.exploration.omega == 7.5


class TestValidation:

    def test_collects_every_bad_key(self, manager):
        document = {
            "experiment": {"total_steps": -1, "seeds": []},
            "agent": {"gamma": 1.5},
            "exploration": {"kind": "random"},
        }
        with pytest.raises(ValidationError) as info:
            manager.from_dict(document)
        assert {"experiment.total_steps", "experiment.seeds", "agent.gamma",
                "exploration.kind"} <= set(info.value.keys)

    def test_unknown_keys(self, manager):
        with pytest.raises(ValidationError) as info:
            manager.from_dict({"agent": {"kk": 3}, "network": {}})
        assert set(info.value.keys) == {"agent.kk", "network"}

    def test_interval_must_fit_budget(self, manager):
        with pytest.raises(ValidationError) as info:
            manager.from_dict({"experiment": {"total_steps": 100, "eval_interval": 500}})
        assert info.value.keys == ["experiment.eval_interval"]

    @pytest.mark.parametrize("key, value", [
        ("experiment.env_id", "pong"),
        ("experiment.agent", "dqn"),
        ("experiment.seeds", [1, 1]),
        ("experiment.workers", 0),
        ("agent.k", 0),
        ("agent.delta", 0.0),
        ("agent.alpha", 1.5),
        ("encoder.hidden", [64, 0]),
        ("exploration.omega", 0.0),
        ("exploration.beta", -1.0),
        ("logging.level", "LOUD"),
    ])
    def test_single_bad_value(self, manager, key, value):
        with pytest.raises(ValidationError) as info:
            manager.from_dict({}, {key: value})
        assert key in info.value.keys

    def test_validation_error_is_config_error(self, manager):
        with pytest.raises(ConfigError):
            manager.from_dict({"experiment": {"seeds": "zero"}})

    def test_unreadable_file(self, manager, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("experiment: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError):
            manager.load(bad)
        with pytest.raises(ConfigError):
            manager.load(tmp_path / "missing.yaml")

    def test_top_level_must_be_mapping(self, manager, tmp_path):
        with pytest.raises(ConfigError):
            manager.load(_write(tmp_path / "list.yaml", [1, 2]))


class TestSave:

    def test_round_trip(self, manager, tmp_path):
        config = manager.from_dict({"preset": "gridworld", "exploration": {"kind": "mellowmax"}})
        manager.save(config, tmp_path / "config.yaml")
        loaded = manager.load(tmp_path / "config.yaml")
        assert isinstance(loaded, ExperimentConfig)
        assert loaded.to_dict() == config.to_dict()


class TestShippedConfigs:

    CONFIG_DIR = Path(__file__).parent / "configs"

    @pytest.mark.parametrize("path", sorted((Path(__file__).parent / "configs").glob("*.*")),
                             ids=lambda p: p.name)
    def test_loads(self, manager, path):
        config = manager.load(path)
        assert config.experiment.output_dir.startswith("results/")

    def test_room_configs_use_room_capacity(self, manager):
        for path in self.CONFIG_DIR.glob("*_room_*.yaml"):
            assert manager.load(path).agent.capacity == 150, path.name

    def test_read_document_keeps_raw_values(self, manager):
        document = manager.read_document(self.CONFIG_DIR / "compare_all.yaml")
        assert "agent" not in document
        assert document["experiment"]["output_dir"] == "results/compare"
