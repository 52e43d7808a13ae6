"""
实验运行器
由配置构造 (环境, 智能体, 策略)，按种子运行训练与周期性贪心评估，
支持断点续跑、跨种子聚合、ω 网格扫描以及结果文件导出
"""

import csv
import gzip
import json
import os
import pickle
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .agents import EpisodeTrace, EpisodicAgent, MFECAgent, NECAgent, Transition
from .encoder import RMSprop
from .exploration import POLICY_KINDS, ExplorationPolicy, build_policy, select_greedy
from .performance import ManagedWorkerPool
from .records import (
    AGGREGATE_HEADER,
    CURVE_HEADER,
    FINAL_WINDOW,
    Aggregate,
    AggregatePoint,
    EvalRecord,
)
from ..config.manager import ConfigManager, ExperimentConfig
from ..envs import Environment, make_env
from ..utils.exceptions import (
    EpisodicControlError,
    RecordsError,
    RunFailure,
    SnapshotError,
    ValidationError,
)
from ..utils.logger import get_logger

logger = get_logger(__name__)

SUMMARY_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
OMEGA_GRID = (5.0, 7.0, 9.0, 12.0)

# 主种子展开出的互不相交的命名随机流
SEED_STREAMS = {"env": 0, "agent": 1, "policy": 2, "evaluation": 3}
_MAX_SEED = 2**31 - 1

# 续跑时允许与检查点不同的配置项
_RESUMABLE_KEYS = ("total_steps", "workers", "output_dir", "checkpoint")


def seed_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """由 (主种子, 流编号, 附加计数) 派生独立的随机数生成器"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), SEED_STREAMS[name], *extra]))


def build_agent(config: ExperimentConfig, env: Environment,
                rng: np.random.Generator) -> EpisodicAgent:
    """按配置构造智能体，初始化随机性只来自 agent 流"""
    enc = config.encoder
    if config.experiment.agent == "mfec":
        return MFECAgent(env.n_actions, env.observation_dim, config.agent,
                         projection_dim=enc.projection_dim,
                         projection_seed=int(rng.integers(_MAX_SEED)))
    optimizer = RMSprop(enc.learning_rate, enc.rho, enc.epsilon, enc.momentum)
    return NECAgent(env.n_actions, env.observation_dim, config.agent, rng=rng,
                    key_size=enc.key_size, hidden=tuple(enc.hidden),
                    optimizer=optimizer, clip_norm=enc.clip_norm)


def build_exploration(config: ExperimentConfig) -> ExplorationPolicy:
    ex = config.exploration
    return build_policy(ex.kind, ex.schedule(), beta=ex.beta, omega=ex.omega,
                        ucb_c=ex.ucb_c, tol=ex.tol)


def evaluate(agent: EpisodicAgent, env_id: str, episodes: int,
             rng: np.random.Generator) -> List[float]:
    """
    在全新的环境实例上运行若干贪心回合

    查询不刷新记忆的最近使用时间，训练状态保持不变。
    """
    returns = []
    for episode_seed in rng.integers(0, _MAX_SEED, size=episodes):
        env = make_env(env_id)
        state = env.reset(seed=int(episode_seed))
        total, done = 0.0, False
        while not done:
            q = agent.q_values(state.observation, optimistic=True, touch=False)
            state, reward, done = env.step(select_greedy(q))
            total += reward
        returns.append(total)
    return returns


@dataclass
class RunState:
    """单个种子的完整运行状态，检查点即其 pickle"""
    seed: int
    config: Dict[str, Any]
    env: Environment
    agent: EpisodicAgent
    policy: ExplorationPolicy
    rngs: Dict[str, np.random.Generator]
    observation: np.ndarray
    trace: EpisodeTrace = field(default_factory=EpisodeTrace)
    step: int = 0
    records: List[EvalRecord] = field(default_factory=list)
    episode_returns: List[float] = field(default_factory=list)
    elapsed: float = 0.0
    version: int = CHECKPOINT_VERSION


@dataclass
class CellResult:
    """一个 (配置 × 种子) 单元的结果"""
    seed: int
    records: List[EvalRecord]
    solver_failures: int
    episodes: int
    wall_clock: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: List[EvalRecord]
    cells: List[CellResult]
    wall_clock: float
    pool_stats: Dict[str, Any] = field(default_factory=dict)

    @property
    def solver_failures(self) -> Dict[int, int]:
        return {c.seed: c.solver_failures for c in self.cells}


def _comparable(config: Dict[str, Any]) -> Dict[str, Any]:
    data = json.loads(json.dumps(config))
    for key in _RESUMABLE_KEYS:
        data["experiment"].pop(key, None)
    return data


def _new_run_state(config: ExperimentConfig, seed: int) -> RunState:
    rngs = {name: seed_stream(seed, name) for name in ("env", "agent", "policy")}
    env = make_env(config.experiment.env_id)
    agent = build_agent(config, env, rngs["agent"])
    state = env.reset(seed=int(rngs["env"].integers(_MAX_SEED)))
    return RunState(seed=seed, config=config.to_dict(), env=env, agent=agent,
                    policy=build_exploration(config), rngs=rngs,
                    observation=state.observation)


def checkpoint_path(output_dir: Union[str, Path], seed: int) -> Path:
    return Path(output_dir) / "checkpoints" / f"seed_{seed}.pkl.gz"


def seed_csv_path(output_dir: Union[str, Path], seed: int) -> Path:
    return Path(output_dir) / "seeds" / f"seed_{seed}.csv"


def save_checkpoint(run: RunState, path: Path):
    """先写临时文件再替换，中断不会留下半个检查点"""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with gzip.open(tmp, "wb") as f:
        pickle.dump(run, f, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)
    logger.debug(f"检查点已写入: {path} (步数 {run.step})")


def load_checkpoint(path: Path) -> RunState:
    try:
        with gzip.open(path, "rb") as f:
            run = pickle.load(f)
    except (OSError, EOFError, pickle.UnpicklingError, AttributeError) as e:
        raise SnapshotError(f"无法读取检查点 {path}: {e}") from e
    if not isinstance(run, RunState) or run.version != CHECKPOINT_VERSION:
        raise SnapshotError(f"检查点类型或版本不匹配: {path}")
    return run


def _write_seed_csv(path: Path, records: Sequence[EvalRecord]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        writer.writerows(r.to_row() for r in records)


def _append_seed_csv(path: Path, record: EvalRecord):
    with open(path, "a", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerow(record.to_row())


def _resume_run_state(config: ExperimentConfig, seed: int, csv_path: Path) -> Optional[RunState]:
    path = checkpoint_path(config.experiment.output_dir, seed)
    if not path.exists():
        return None
    run = load_checkpoint(path)
    if run.seed != seed or _comparable(run.config) != _comparable(config.to_dict()):
        raise SnapshotError(f"检查点与当前配置不一致: {path}")
    if csv_path.exists():
        with open(csv_path, "r", encoding="utf-8") as f:
            persisted = sum(1 for _ in f) - 1
        if persisted > len(run.records):
            logger.warning(f"种子 {seed}: 丢弃检查点之后的 {persisted - len(run.records)} 条评估记录")
    logger.info(f"种子 {seed}: 从第 {run.step} 步续跑")
    return run


def run_cell(config: ExperimentConfig, seed: int, resume: bool = False) -> CellResult:
    """
    运行单个种子的完整训练

    每一步：编码 → 选择动作 → 环境推进 → 记录经验；回合结束时写入记忆；
    NEC 在达到训练开始步数后每步训练一次；每 eval_interval 步做一次评估，
    评估记录增量写入 seeds/seed_<s>.csv，并写入检查点。
    """
    exp = config.experiment
    csv_path = seed_csv_path(exp.output_dir, seed)
    run = _resume_run_state(config, seed, csv_path) if resume else None
    if run is None:
        run = _new_run_state(config, seed)
    run.records = [r for r in run.records if r.step <= exp.total_steps]
    _write_seed_csv(csv_path, run.records)

    agent, env, policy = run.agent, run.env, run.policy
    started = time.perf_counter() - run.elapsed
    logger.info(f"种子 {seed} 开始: {exp.env_id}/{exp.agent}/{config.exploration.kind}, "
                f"共 {exp.total_steps} 步")

    while run.step < exp.total_steps:
        key = agent.encode(run.observation)
        q = agent.q_values_for_key(key, optimistic=policy.optimistic_unknown, touch=True)
        sigma = agent.uncertainties(key) if policy.needs_uncertainty else None
        action = policy.select(q, agent.global_step, run.rngs["policy"], sigma)
        state, reward, done = env.step(action)
        run.trace.append(Transition(run.observation, key, action, reward, done))
        agent.observe_step()
        run.step += 1
        run.observation = state.observation

        if done:
            agent.end_of_episode(run.trace)
            run.episode_returns.append(run.trace.total_reward)
            run.trace = EpisodeTrace()
            run.observation = env.reset(seed=int(run.rngs["env"].integers(_MAX_SEED))).observation

        if isinstance(agent, NECAgent) and agent.ready_to_train():
            agent.train_step(run.rngs["agent"])

        if run.step % exp.eval_interval == 0:
            if isinstance(agent, NECAgent) and not agent.encoder.all_finite():
                raise EpisodicControlError(f"种子 {seed}: 第 {run.step} 步编码器参数出现非有限值")
            returns = evaluate(agent, exp.env_id, exp.eval_episodes,
                               seed_stream(seed, "evaluation", run.step))
            record = EvalRecord.from_returns(run.step, seed, returns)
            run.records.append(record)
            _append_seed_csv(csv_path, record)
            run.elapsed = time.perf_counter() - started
            logger.info(f"种子 {seed} 第 {run.step} 步评估: 平均回报 {record.mean_return:.3f} "
                        f"± {record.std_return:.3f}")
            if exp.checkpoint:
                save_checkpoint(run, checkpoint_path(exp.output_dir, seed))

    # 预算用尽时未完成的回合不写入记忆
    run.elapsed = time.perf_counter() - started
    logger.info(f"种子 {seed} 完成: {len(run.episode_returns)} 个回合, "
                f"β 求解失败 {policy.solver_failures} 次, 用时 {run.elapsed:.1f}s")
    return CellResult(seed=seed, records=list(run.records), solver_failures=policy.solver_failures,
                      episodes=len(run.episode_returns), wall_clock=run.elapsed)


def run_experiment(config: ExperimentConfig, resume: bool = False,
                   on_cell_done: Optional[Callable[[CellResult], None]] = None) -> ExperimentResult:
    """
    对配置中的每个种子运行一个单元，合并记录并导出结果文件

    Raises:
        RunFailure: 有单元失败；failures.json 已写入输出目录
    """
    exp = config.experiment
    output_dir = Path(exp.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ConfigManager().save(config, output_dir / "config.yaml")
    started = time.perf_counter()

    cells: List[CellResult] = []
    failures: List[Dict[str, Any]] = []
    with ManagedWorkerPool(exp.workers) as pool:
        futures = pool.map_ordered(partial(run_cell, config, resume=resume), exp.seeds)
        for seed, future in zip(exp.seeds, futures):
            try:
                cell = future.result()
            except Exception as e:
                logger.error(f"种子 {seed} 运行失败: {e}")
                failures.append({"seed": seed, "error": type(e).__name__, "message": str(e)})
                continue
            cells.append(cell)
            if on_cell_done:
                on_cell_done(cell)
        pool_stats = pool.get_stats()
    logger.info(f"工作池: 完成 {pool_stats['completed_tasks']} 个单元, "
                f"失败 {pool_stats['failed_tasks']} 个")

    if failures:
        path = output_dir / "failures.json"
        path.write_text(json.dumps({"failures": failures}, indent=2, ensure_ascii=False),
                        encoding="utf-8")
        raise RunFailure(f"{len(failures)} 个单元运行失败，详见 {path}", failures)

    cells.sort(key=lambda c: c.seed)
    records = sorted((r for c in cells for r in c.records), key=lambda r: (r.seed, r.step))
    result = ExperimentResult(config=config, records=records, cells=cells,
                              wall_clock=time.perf_counter() - started, pool_stats=pool_stats)
    export_curves(records, output_dir, config=config.to_dict(), wall_clock=result.wall_clock,
                  solver_failures=result.solver_failures)
    logger.info(f"实验完成: {len(exp.seeds)} 个种子, 用时 {result.wall_clock:.1f}s")
    return result


def _last_window_mean(values: Sequence[float]) -> float:
    return float(np.mean(values[-FINAL_WINDOW:]))


def aggregate(records: Sequence[EvalRecord]) -> Aggregate:
    """
    逐评估点的跨种子均值与总体标准差，最终得分为最后 5 次评估的均值

    Raises:
        RecordsError: 记录为空或各种子的评估步不一致
    """
    if not records:
        raise RecordsError("没有可聚合的评估记录")
    by_seed: Dict[int, Dict[int, float]] = {}
    for r in records:
        by_seed.setdefault(r.seed, {})[r.step] = r.mean_return
    seeds = sorted(by_seed)
    steps = sorted(by_seed[seeds[0]])
    if any(sorted(by_seed[s]) != steps for s in seeds):
        raise RecordsError(f"各种子的评估步不一致: {seeds}")

    matrix = np.array([[by_seed[s][step] for step in steps] for s in seeds], dtype=np.float64)
    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    points = [AggregatePoint(step, float(m), float(sd)) for step, m, sd in zip(steps, means, stds)]
    return Aggregate(points=points, final_score=_last_window_mean(means), seeds=seeds)


@dataclass(frozen=True)
class SweepRow:
    omega: float
    final_score: float


@dataclass
class SweepResult:
    rows: List[SweepRow]
    best_omega: float

    def to_dict(self) -> Dict[str, Any]:
        return {"best_omega": self.best_omega,
                "rows": [{"omega": r.omega, "final_score": r.final_score} for r in self.rows]}


def sweep_omega(config: ExperimentConfig, omegas: Sequence[float] = OMEGA_GRID,
                resume: bool = False, runner: Optional[Callable[..., ExperimentResult]] = None
                ) -> SweepResult:
    """
    对每个 ω 运行一次实验并聚合；最终得分最高者为最佳，并列取较小的 ω

    每个 ω 的结果写入 <output_dir>/omega_<ω>/，汇总写入 sweep.csv。
    """
    if config.exploration.kind != "mellowmax":
        raise ValidationError("ω 扫描要求 mellowmax 探索策略", keys=["exploration.kind"])
    if not omegas:
        raise ValidationError("ω 网格为空", keys=["exploration.omega"])
    runner = runner or run_experiment
    base_dir = Path(config.experiment.output_dir)

    rows = []
    for omega in sorted(float(w) for w in omegas):
        cell_config = config.replace({
            "exploration.omega": omega,
            "experiment.output_dir": str(base_dir / f"omega_{omega:g}"),
        })
        result = runner(cell_config, resume=resume)
        score = aggregate(result.records).final_score
        rows.append(SweepRow(omega, score))
        logger.info(f"ω = {omega:g}: 最终得分 {score:.4f}")

    best = min(rows, key=lambda r: (-r.final_score, r.omega))
    base_dir.mkdir(parents=True, exist_ok=True)
    with open(base_dir / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("omega", "final_score"))
        writer.writerows((repr(r.omega), repr(r.final_score)) for r in rows)
    logger.info(f"最佳 ω = {best.omega:g}")
    return SweepResult(rows=rows, best_omega=best.omega)


# 环境 → 超参数预设
DOMAIN_PRESETS = {
    "cartpole": "classic_control",
    "acrobot": "classic_control",
    "open_room": "gridworld",
    "four_room": "gridworld",
}
COMPARE_AGENTS = ("mfec", "nec")
DEFAULT_COMPARE_DIR = "results/compare"


@dataclass(frozen=True)
class CompareRow:
    env_id: str
    agent: str
    exploration: str
    final_score: float

    @property
    def name(self) -> str:
        return f"{self.env_id}_{self.agent}_{self.exploration}"


@dataclass
class CompareResult:
    rows: List[CompareRow]

    def best(self, env_id: str, agent: str) -> CompareRow:
        """某个 (环境, 智能体) 下最终得分最高的探索策略，并列取先运行者"""
        candidates = [r for r in self.rows if r.env_id == env_id and r.agent == agent]
        if not candidates:
            raise KeyError(f"{env_id}/{agent}")
        return max(candidates, key=lambda r: r.final_score)

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": [{"env_id": r.env_id, "agent": r.agent, "exploration": r.exploration,
                          "final_score": r.final_score} for r in self.rows]}


def compare_strategies(document: Dict[str, Any], envs: Sequence[str] = tuple(DOMAIN_PRESETS),
                       agents: Sequence[str] = COMPARE_AGENTS,
                       kinds: Sequence[str] = POLICY_KINDS,
                       overrides: Optional[Dict[str, Any]] = None, resume: bool = False,
                       runner: Optional[Callable[..., ExperimentResult]] = None) -> CompareResult:
    """
    在 (环境 × 智能体 × 探索策略) 网格上逐格运行实验

    每格先套用所属环境的预设（未登记的环境不套预设），再叠加 document 与 overrides；
    结果写入 <output_dir>/<env>_<agent>_<kind>/，汇总写入 compare.csv。
    所有格子的配置都在运行前校验。

    Raises:
        ValidationError: 网格为空或某一格配置非法
    """
    if not envs or not agents or not kinds:
        raise ValidationError("比较网格为空", keys=["experiment.env_id", "experiment.agent",
                                               "exploration.kind"])
    runner = runner or run_experiment
    manager = ConfigManager()
    document = {k: v for k, v in document.items() if k != "preset"}
    overrides = dict(overrides or {})
    base_dir = Path(overrides.pop("experiment.output_dir", None)
                    or document.get("experiment", {}).get("output_dir")
                    or DEFAULT_COMPARE_DIR)

    cells = []
    for env_id in envs:
        layered = dict(document)
        if env_id in DOMAIN_PRESETS:
            layered["preset"] = DOMAIN_PRESETS[env_id]
        for agent in agents:
            for kind in kinds:
                row = CompareRow(env_id, agent, kind, float("nan"))
                cell_overrides = dict(overrides, **{
                    "experiment.env_id": env_id, "experiment.agent": agent,
                    "exploration.kind": kind, "experiment.output_dir": str(base_dir / row.name),
                })
                cells.append((row, manager.from_dict(layered, cell_overrides)))
    logger.info(f"比较网格: {len(envs)} 个环境 × {len(agents)} 个智能体 × {len(kinds)} 种策略")

    rows = []
    for row, config in cells:
        result = runner(config, resume=resume)
        score = aggregate(result.records).final_score
        rows.append(CompareRow(row.env_id, row.agent, row.exploration, score))
        logger.info(f"{row.name}: 最终得分 {score:.4f}")

    base_dir.mkdir(parents=True, exist_ok=True)
    with open(base_dir / "compare.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("env_id", "agent", "exploration", "final_score"))
        writer.writerows((r.env_id, r.agent, r.exploration, repr(r.final_score)) for r in rows)
    return CompareResult(rows)


def export_curves(records: Sequence[EvalRecord], path: Union[str, Path],
                  config: Optional[Dict[str, Any]] = None, wall_clock: Optional[float] = None,
                  solver_failures: Optional[Dict[int, int]] = None):
    """
    写出 curves.csv、aggregate.csv 与 summary.json

    Raises:
        RecordsError: 记录为空或不整齐
        OSError: 目录不可写
    """
    if not records:
        raise RecordsError("没有可导出的评估记录")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: (r.seed, r.step))
    agg = aggregate(ordered)

    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        writer.writerows(r.to_row() for r in ordered)
    with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        writer.writerows(p.to_row() for p in agg.points)

    per_seed: Dict[int, List[float]] = {}
    for r in ordered:
        per_seed.setdefault(r.seed, []).append(r.mean_return)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": config or {},
        "final_score": agg.final_score,
        "final_scores": {str(s): _last_window_mean(v) for s, v in per_seed.items()},
        "eval_episodes": ordered[0].episodes,
        "wall_clock_seconds": wall_clock,
        "solver_failures": {str(s): n for s, n in (solver_failures or {}).items()},
    }
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, ensure_ascii=False, sort_keys=True)
    logger.info(f"结果已导出到 {out}")


def read_curves(path: Union[str, Path]) -> List[EvalRecord]:
    """读取一个 curves.csv（或 seed_<s>.csv）文件"""
    path = Path(path)
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != CURVE_HEADER:
                raise SnapshotError(f"曲线文件表头不匹配: {path}")
            return [EvalRecord.from_row(row) for row in reader]
    except (OSError, KeyError, ValueError) as e:
        raise SnapshotError(f"无法读取曲线文件 {path}: {e}") from e


def load_records(directory: Union[str, Path]) -> List[EvalRecord]:
    """
    读取结果目录中的评估记录：优先 curves.csv，否则合并 seeds/ 下的逐种子文件
    """
    directory = Path(directory)
    curves = directory / "curves.csv"
    if curves.exists():
        records = read_curves(curves)
    else:
        files = sorted((directory / "seeds").glob("seed_*.csv"))
        if not files:
            raise SnapshotError(f"{directory} 中没有评估记录")
        records = [r for p in files for r in read_curves(p)]
    return sorted(records, key=lambda r: (r.seed, r.step))


def load_run_summary(directory: Union[str, Path]) -> Dict[str, Any]:
    """读取 summary.json；不存在时返回空字典"""
    path = Path(directory) / "summary.json"
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise SnapshotError(f"无法读取运行摘要 {path}: {e}") from e
