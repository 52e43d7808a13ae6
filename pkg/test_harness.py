"""
实验运行器测试
评估点数量、确定性、续跑、聚合、ω 扫描与结果导出
"""

import json
import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memec.config.manager import ConfigManager
from memec.core.agents import MFECAgent, NECAgent
from memec.core.exploration import POLICY_KINDS
from memec.core.harness import (
    ExperimentResult,
    build_agent,
    checkpoint_path,
    compare_strategies,
    evaluate,
    export_curves,
    load_checkpoint,
    load_records,
    read_curves,
    run_cell,
    run_experiment,
    seed_stream,
    sweep_omega,
)
from memec.core.harness import aggregate
from memec.core.records import EvalRecord
from memec.envs import make_env
from memec.utils.exceptions import RecordsError, RunFailure, SnapshotError, ValidationError


def _config(document, **overrides):
    return ConfigManager().from_dict(document, overrides)


def _records(table):
    """{seed: [mean_return, ...]} → 步数为 1, 2, ... 的评估记录"""
    return [EvalRecord(step, seed, float(v), 0.0, 5)
            for seed, series in table.items() for step, v in enumerate(series, start=1)]


class TestSeedStreams:

    def test_named_streams_are_independent_and_reproducible(self):
        a = seed_stream(0, "env").integers(1 << 30, size=4)
        b = seed_stream(0, "env").integers(1 << 30, size=4)
        c = seed_stream(0, "policy").integers(1 << 30, size=4)
        d = seed_stream(1, "env").integers(1 << 30, size=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c) and not np.array_equal(a, d)

    def test_evaluation_stream_depends_on_step(self):
        a = seed_stream(0, "evaluation", 500).integers(1 << 30)
        b = seed_stream(0, "evaluation", 1000).integers(1 << 30)
        assert a != b


class TestBuild:

    def test_room_domain_capacity(self):
        config = _config({"preset": "gridworld"})
        agent = build_agent(config, make_env("open_room"), seed_stream(0, "agent"))
        assert isinstance(agent, MFECAgent)
        assert all(buf.capacity == 150 for buf in agent.table.buffers)

    def test_nec_agent_shapes(self):
        config = _config({}, **{"experiment.agent": "nec", "encoder.key_size": 8,
                                "encoder.hidden": [16]})
        agent = build_agent(config, make_env("cartpole"), seed_stream(0, "agent"))
        assert isinstance(agent, NECAgent)
        assert agent.encoder.out_dim == 8 and len(agent.dnds) == 2


class TestRunExperiment:

    def test_evaluation_points_per_seed(self, stub_document):
        result = run_experiment(_config(stub_document))
        assert [(r.seed, r.step) for r in result.records] == [(0, 100), (0, 200), (1, 100), (1, 200)]
        assert all(r.episodes == 3 for r in result.records)
        # 桩环境上贪心策略总是选择有奖励的动作
        assert all(r.mean_return == 1.0 for r in result.records if r.step == 200)

    def test_pool_stats_reported(self, stub_document):
        result = run_experiment(_config(stub_document))
        assert result.pool_stats["completed_tasks"] == 2
        assert result.pool_stats["failed_tasks"] == 0
        assert result.pool_stats["active_tasks"] == 0

    def test_cartpole_two_points(self, tmp_path):
        config = _config({"experiment": {"total_steps": 1000, "eval_interval": 500, "seeds": [0],
                                         "output_dir": str(tmp_path)}})
        result = run_experiment(config)
        assert [r.step for r in result.records] == [500, 1000]

    def test_output_files(self, stub_document):
        config = _config(stub_document)
        run_experiment(config)
        out = Path(config.experiment.output_dir)
        for name in ("config.yaml", "curves.csv", "aggregate.csv", "summary.json",
                     "seeds/seed_0.csv", "seeds/seed_1.csv", "checkpoints/seed_0.pkl.gz"):
            assert (out / name).exists(), name
        lines = (out / "curves.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "step,seed,mean_return,std_return,episodes"
        assert len(lines) == 5
        assert (out / "aggregate.csv").read_text(encoding="utf-8").splitlines()[0] == "step,mean,std"

    def test_same_seed_reproduces_identical_files(self, stub_document, tmp_path):
        first = _config(stub_document, **{"experiment.output_dir": str(tmp_path / "a")})
        second = _config(stub_document, **{"experiment.output_dir": str(tmp_path / "b")})
        run_experiment(first)
        run_experiment(second)
        for name in ("curves.csv", "aggregate.csv", "seeds/seed_1.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    @pytest.mark.parametrize("kind", POLICY_KINDS)
    def test_every_exploration_policy_runs(self, stub_document, kind):
        stub_document["exploration"] = {"kind": kind}
        stub_document["experiment"]["seeds"] = [3]
        result = run_experiment(_config(stub_document))
        assert len(result.records) == 2
        assert set(result.solver_failures) == {3}

    def test_summary_echoes_complete_config(self, stub_document):
        config = _config(stub_document)
        run_experiment(config)
        summary = json.loads((Path(config.experiment.output_dir) / "summary.json").read_text("utf-8"))
        assert summary["config"] == config.to_dict()
        assert summary["schema_version"] == 1
        assert summary["eval_episodes"] == 3
        assert set(summary["solver_failures"]) == {"0", "1"}
        assert summary["wall_clock_seconds"] >= 0

    def test_cell_failures_write_manifest(self, stub_document):
        stub_document["experiment"]["env_id"] = "stub_broken"
        config = _config(stub_document)
        with pytest.raises(RunFailure) as info:
            run_experiment(config)
        assert len(info.value.failures) == 2
        manifest = json.loads((Path(config.experiment.output_dir) / "failures.json").read_text("utf-8"))
        assert [f["seed"] for f in manifest["failures"]] == [0, 1]
        assert manifest["failures"][0]["error"] == "RuntimeError"

    def test_nec_smoke(self, tmp_path):
        config = _config({}, **{
            "experiment.agent": "nec", "experiment.total_steps": 300, "experiment.eval_interval": 150,
            "experiment.seeds": [0], "experiment.output_dir": str(tmp_path),
            "agent.training_start": 50, "agent.capacity": 500, "agent.replay_capacity": 1000,
            "agent.n_step": 10, "encoder.key_size": 8, "encoder.hidden": [16],
        })
        result = run_experiment(config)
        assert len(result.records) == 2
        run = load_checkpoint(checkpoint_path(tmp_path, 0))
        assert run.agent.train_steps > 0
        assert run.agent.encoder.all_finite()


class TestResume:

    def test_resume_reproduces_remaining_records(self, tmp_path):
        base = {"experiment": {"env_id": "cartpole", "seeds": [0], "eval_interval": 300,
                               "eval_episodes": 2}}
        full = _config(base, **{"experiment.total_steps": 900,
                                "experiment.output_dir": str(tmp_path / "full")})
        run_experiment(full)

        partial_dir = str(tmp_path / "partial")
        run_experiment(_config(base, **{"experiment.total_steps": 300,
                                        "experiment.output_dir": partial_dir}))
        resumed = _config(base, **{"experiment.total_steps": 900, "experiment.output_dir": partial_dir})
        run_experiment(resumed, resume=True)

        full_curves = (tmp_path / "full" / "curves.csv").read_bytes()
        assert (tmp_path / "partial" / "curves.csv").read_bytes() == full_curves
        assert (tmp_path / "partial" / "seeds" / "seed_0.csv").read_bytes() == \
            (tmp_path / "full" / "seeds" / "seed_0.csv").read_bytes()

    def test_resume_without_checkpoint_starts_fresh(self, stub_document):
        config = _config(stub_document)
        cell = run_cell(config, 0, resume=True)
        assert [r.step for r in cell.records] == [100, 200]

    def test_resume_rejects_changed_config(self, stub_document):
        config = _config(stub_document)
        run_cell(config, 0)
        changed = config.replace({"exploration.kind": "boltzmann"})
        with pytest.raises(SnapshotError):
            run_cell(changed, 0, resume=True)

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "seed_0.pkl.gz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(SnapshotError):
            load_checkpoint(path)


class TestEvaluate:

    def test_evaluation_leaves_memory_untouched(self):
        config = _config({}, **{"experiment.agent": "nec", "encoder.key_size": 4,
                                "encoder.hidden": [8]})
        env = make_env("cartpole")
        agent = build_agent(config, env, seed_stream(0, "agent"))
        rng = np.random.default_rng(0)
        for dnd in agent.dnds:
            for _ in range(20):
                dnd.write(rng.normal(size=4), float(rng.normal()))
        snapshot = [(d.keys.copy(), d.values.copy(), d.recency.copy()) for d in agent.dnds]
        returns = evaluate(agent, "cartpole", 2, seed_stream(0, "evaluation", 10))
        assert len(returns) == 2 and all(1 <= r <= 200 for r in returns)
        for d, (keys, values, recency) in zip(agent.dnds, snapshot):
            np.testing.assert_array_equal(d.keys, keys)
            np.testing.assert_array_equal(d.values, values)
            np.testing.assert_array_equal(d.recency, recency)


class TestAggregate:

    def test_single_seed_has_zero_std(self):
        agg = aggregate(_records({0: [1.0, 2.0, 3.0]}))
        assert all(p.std == 0.0 for p in agg.points)

    def test_population_std_across_seeds(self):
        agg = aggregate(_records({0: [1.0], 1: [2.0], 2: [3.0]}))
        assert agg.points[0].mean == pytest.approx(2.0)
        assert agg.points[0].std == pytest.approx(np.sqrt(2.0 / 3.0))

    def test_final_score_is_mean_of_last_five(self):
        agg = aggregate(_records({0: list(range(1, 11))}))
        assert agg.final_score == pytest.approx(8.0)
        two_seeds = aggregate(_records({0: list(range(1, 11)), 1: [0.0] * 10}))
        assert two_seeds.final_score == pytest.approx(4.0)

    def test_ragged_records_rejected(self):
        records = _records({0: [1.0, 2.0], 1: [1.0]})
        with pytest.raises(RecordsError):
            aggregate(records)
        with pytest.raises(RecordsError):
            aggregate([])

    def test_invariant_under_seed_permutation(self):
        records = _records({0: [1.0, 5.0], 1: [2.0, 3.0], 2: [0.5, 9.0]})
        shuffled = records[:]
        random.Random(0).shuffle(shuffled)
        assert aggregate(shuffled) == aggregate(records)


class TestExport:

    def test_rows_and_round_trip(self, tmp_path):
        records = [EvalRecord(500, 0, 1.0 / 3.0, 0.1, 5), EvalRecord(1000, 0, 2.5, 0.0, 5),
                   EvalRecord(500, 1, -7.125, 1e-17, 5), EvalRecord(1000, 1, 195.2, 3.3, 5)]
        export_curves(records, tmp_path, config={"experiment": {"seeds": [0, 1]}})
        lines = (tmp_path / "curves.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1 + 4
        assert read_curves(tmp_path / "curves.csv") == sorted(records, key=lambda r: (r.seed, r.step))
        assert load_records(tmp_path) == sorted(records, key=lambda r: (r.seed, r.step))

    def test_summary_echo_and_scores(self, tmp_path):
        config = {"experiment": {"env_id": "cartpole", "seeds": [0]}, "agent": {"k": 11}}
        records = _records({0: [1.0, 2.0]})
        export_curves(records, tmp_path, config=config, wall_clock=1.5, solver_failures={0: 2})
        summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
        assert summary["config"] == config
        assert summary["final_scores"] == {"0": 1.5}
        assert summary["solver_failures"] == {"0": 2}
        assert summary["wall_clock_seconds"] == 1.5

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(RecordsError):
            export_curves([], tmp_path)

    def test_load_records_falls_back_to_seed_files(self, stub_document):
        config = _config(stub_document)
        run_experiment(config)
        out = Path(config.experiment.output_dir)
        expected = load_records(out)
        (out / "curves.csv").unlink()
        assert load_records(out) == expected

    def test_bad_header(self, tmp_path):
        (tmp_path / "curves.csv").write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(SnapshotError):
            load_records(tmp_path)


def _scripted_runner(scores):
    """按 ω 返回预设得分的运行器"""
    def runner(config, resume=False):
        omega = config.exploration.omega
        records = [EvalRecord(step, 0, scores[omega], 0.0, 5) for step in (100, 200)]
        return ExperimentResult(config, records, [], 0.0)
    return runner


class TestSweep:

    def test_requires_mellowmax(self, stub_document):
        with pytest.raises(ValidationError):
            sweep_omega(_config(stub_document), [5.0])

    def test_best_omega(self, stub_document):
        stub_document["exploration"] = {"kind": "mellowmax"}
        result = sweep_omega(_config(stub_document), [5, 7, 9, 12],
                             runner=_scripted_runner({5.0: 1.0, 7.0: 3.0, 9.0: 2.0, 12.0: 0.0}))
        assert result.best_omega == 7.0
        assert [r.omega for r in result.rows] == [5.0, 7.0, 9.0, 12.0]

    def test_ties_go_to_smaller_omega(self, stub_document):
        stub_document["exploration"] = {"kind": "mellowmax"}
        result = sweep_omega(_config(stub_document), [12, 9],
                             runner=_scripted_runner({9.0: 1.0, 12.0: 1.0}))
        assert result.best_omega == 9.0

    def test_single_omega_equals_run_and_aggregate(self, stub_document, tmp_path):
        stub_document["exploration"] = {"kind": "mellowmax", "omega": 7.5}
        config = _config(stub_document)
        swept = sweep_omega(config, [7.5])
        direct = run_experiment(config.replace({"experiment.output_dir": str(tmp_path / "direct")}))
        assert swept.rows[0].final_score == aggregate(direct.records).final_score
        assert (Path(config.experiment.output_dir) / "sweep.csv").exists()


def _recording_runner(seen, scores):
    """记录每格配置并按探索策略返回预设得分"""
    def runner(config, resume=False):
        seen.append(config)
        score = scores[config.exploration.kind]
        records = [EvalRecord(step, 0, score, 0.0, 5) for step in (100, 200)]
        return ExperimentResult(config, records, [], 0.0)
    return runner


class TestCompare:

    SCORES = {"epsilon_greedy": 1.0, "boltzmann": 2.0, "ucb": 0.5, "thompson": 2.0, "mellowmax": 3.0}

    def test_full_matrix_uses_domain_presets(self, tmp_path):
        seen = []
        result = compare_strategies({"experiment": {"output_dir": str(tmp_path)}},
                                    runner=_recording_runner(seen, self.SCORES))
        assert len(result.rows) == len(seen) == 4 * 2 * 5
        cells = {(c.experiment.env_id, c.experiment.agent, c.exploration.kind) for c in seen}
        assert len(cells) == 40
        for config in seen:
            expected = 150 if config.experiment.env_id in ("open_room", "four_room") else 10_000
            assert config.agent.capacity == expected
            name = f"{config.experiment.env_id}_{config.experiment.agent}_{config.exploration.kind}"
            assert config.experiment.output_dir == str(tmp_path / name)
        assert result.best("acrobot", "nec").exploration == "mellowmax"

        rows = (tmp_path / "compare.csv").read_text(encoding="utf-8").splitlines()
        assert rows[0] == "env_id,agent,exploration,final_score"
        assert len(rows) == 41
        assert rows[1] == "cartpole,mfec,epsilon_greedy,1.0"

    def test_document_and_overrides_layer_over_preset(self, tmp_path):
        seen = []
        document = {"preset": "gridworld", "agent": {"k": 5},
                    "experiment": {"output_dir": str(tmp_path / "ignored")}}
        compare_strategies(document, envs=["cartpole"], agents=["mfec"], kinds=["ucb"],
                           overrides={"experiment.seeds": [4], "experiment.output_dir": str(tmp_path)},
                           runner=_recording_runner(seen, self.SCORES))
        (config,) = seen
        assert config.agent.k == 5 and config.agent.capacity == 10_000
        assert config.experiment.seeds == [4]
        assert config.experiment.output_dir == str(tmp_path / "cartpole_mfec_ucb")

    def test_ties_keep_first_strategy(self, tmp_path):
        result = compare_strategies({"experiment": {"output_dir": str(tmp_path)}}, envs=["open_room"],
                                    agents=["mfec"], kinds=["boltzmann", "thompson"],
                                    runner=_recording_runner([], self.SCORES))
        assert result.best("open_room", "mfec").exploration == "boltzmann"

    def test_invalid_cell_rejected_before_running(self, tmp_path):
        seen = []
        with pytest.raises(ValidationError) as info:
            compare_strategies({"experiment": {"output_dir": str(tmp_path)}}, envs=["cartpole"],
                               agents=["mfec"], kinds=["mellowmax", "softmax-ish"],
                               runner=_recording_runner(seen, self.SCORES))
        assert "exploration.kind" in info.value.keys
        assert seen == []

    def test_empty_grid_rejected(self):
        with pytest.raises(ValidationError):
            compare_strategies({}, envs=[])

    def test_runs_on_stub_environment(self, stub_document):
        result = compare_strategies(stub_document, envs=["stub_bandit"], agents=["mfec"],
                                    kinds=["epsilon_greedy", "mellowmax"])
        out = Path(stub_document["experiment"]["output_dir"])
        assert [r.exploration for r in result.rows] == ["epsilon_greedy", "mellowmax"]
        assert (out / "stub_bandit_mfec_mellowmax" / "curves.csv").exists()
        assert (out / "compare.csv").exists()
