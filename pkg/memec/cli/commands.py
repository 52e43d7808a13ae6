"""
命令行接口实现
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import yaml

from ..config.manager import ConfigManager, ExperimentConfig
from ..core.exploration import POLICY_KINDS
from ..core.harness import (
    COMPARE_AGENTS,
    DEFAULT_COMPARE_DIR,
    DOMAIN_PRESETS,
    OMEGA_GRID,
    aggregate as aggregate_records,
    compare_strategies,
    export_curves,
    load_records,
    load_run_summary,
    run_experiment,
    sweep_omega,
)
from ..envs import available_envs, make_env
from ..ui.cli_display import CliDisplay
from ..utils.exceptions import ConfigError, RunFailure, ValidationError
from ..utils.logger import get_logger, setup_logger

logger = get_logger(__name__)

EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _parse_list(value: Optional[str], cast, key: str) -> Optional[List]:
    """解析逗号分隔的列表"""
    if value is None:
        return None
    try:
        items = [cast(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"无法解析列表 {value!r}", keys=[key])
    if not items:
        raise ValidationError("列表为空", keys=[key])
    return items


def _parse_sets(pairs) -> Dict[str, Any]:
    """解析 --set section.key=value，值按 YAML 标量解释"""
    overrides = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ValidationError("--set 需要 section.key=value 形式", keys=[pair])
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


def _collect_overrides(seeds, steps, eval_interval, workers, out, sets) -> Dict[str, Any]:
    overrides = _parse_sets(sets)
    parsed_seeds = _parse_list(seeds, int, "experiment.seeds")
    if parsed_seeds is not None:
        overrides["experiment.seeds"] = parsed_seeds
    if steps is not None:
        overrides["experiment.total_steps"] = steps
    if eval_interval is not None:
        overrides["experiment.eval_interval"] = eval_interval
    if workers is not None:
        overrides["experiment.workers"] = workers
    if out is not None:
        overrides["experiment.output_dir"] = out
    return overrides


def _setup_logging(ctx: click.Context, config: Optional[ExperimentConfig] = None):
    opts = ctx.obj or {}
    level = "DEBUG" if opts.get("debug") else (
        opts.get("log_level") or (config.logging.level if config else "INFO"))
    log_file = opts.get("log_file") or (config.logging.file if config else "")
    backup_count = config.logging.backup_count if config else 5
    setup_logger("memec", level, Path(log_file) if log_file else None, backup_count)


def _write_failure_manifest(output_dir: Optional[str], error: Exception):
    if not output_dir:
        return
    try:
        path = Path(output_dir)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {"failures": [{"seed": None, "error": type(error).__name__,
                                  "message": str(error)}]}
        (path / "failures.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False),
                                            encoding="utf-8")
    except OSError as e:
        logger.error(f"无法写入失败清单: {e}")


def _exit_on_error(display: CliDisplay, error: Exception, output_dir: Optional[str] = None):
    """配置错误退出码 1，其余运行时错误退出码 2"""
    if isinstance(error, ConfigError):
        display.show_error(f"配置错误: {error}", "使用 `memec config show <config>` 检查解析后的配置")
        sys.exit(EXIT_CONFIG)
    logger.exception("运行失败")
    if not isinstance(error, RunFailure):
        _write_failure_manifest(output_dir, error)
    display.show_error(f"运行失败: {error}")
    sys.exit(EXIT_RUNTIME)


def _override_options(func):
    """run / sweep 共用的覆盖选项"""
    options = [
        click.option("--seeds", help="逗号分隔的种子列表，如 0,1,2"),
        click.option("--steps", type=int, help="训练总步数"),
        click.option("--eval-interval", type=int, help="评估间隔（步）"),
        click.option("--workers", type=int, help="并行工作者数"),
        click.option("--out", help="输出目录"),
        click.option("--set", "sets", multiple=True, help="覆盖任意配置项 section.key=value"),
        click.option("--resume", is_flag=True, help="从检查点续跑"),
        click.option("--brief", "-b", is_flag=True, help="简要显示"),
        click.option("--json", "output_json", is_flag=True, help="JSON格式输出"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group(invoke_without_command=True)
@click.option("--version", is_flag=True, help="显示版本信息")
@click.option("--log-level", help="日志级别（覆盖配置文件）")
@click.option("--log-file", type=click.Path(), help="日志文件路径")
@click.option("--debug", is_flag=True, help="启用详细调试信息")
@click.pass_context
def cli(ctx, version, log_level, log_file, debug):
    """memec - 情景控制与最大熵 mellowmax 探索实验工具"""
    ctx.obj = {"log_level": log_level, "log_file": log_file, "debug": debug}

    if version:
        from .. import __version__
        click.echo(f"memec v{__version__}")
        return

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@click.argument("config_path", type=click.Path())
@_override_options
@click.pass_context
def run(ctx, config_path, seeds, steps, eval_interval, workers, out, sets, resume,
        brief, output_json):
    """按配置文件运行实验（每个种子一个单元）"""
    display = CliDisplay(brief, output_json)
    output_dir = out
    try:
        overrides = _collect_overrides(seeds, steps, eval_interval, workers, out, sets)
        config = ConfigManager().load(config_path, overrides)
        output_dir = config.experiment.output_dir
        _setup_logging(ctx, config)

        result = run_experiment(config, resume=resume, on_cell_done=display.show_cell)
        display.show_aggregate(aggregate_records(result.records),
                               load_run_summary(config.experiment.output_dir))
        display.show_success(f"结果已写入 {config.experiment.output_dir}")
    except Exception as e:
        _exit_on_error(display, e, output_dir)


@cli.command()
@click.argument("config_path", type=click.Path())
@click.option("--omega", "omegas", default=",".join(f"{w:g}" for w in OMEGA_GRID),
              show_default=True, help="逗号分隔的 ω 网格")
@_override_options
@click.pass_context
def sweep(ctx, config_path, omegas, seeds, steps, eval_interval, workers, out, sets, resume,
          brief, output_json):
    """在 ω 网格上扫描 mellowmax 策略"""
    display = CliDisplay(brief, output_json)
    output_dir = out
    try:
        grid = _parse_list(omegas, float, "exploration.omega")
        overrides = _collect_overrides(seeds, steps, eval_interval, workers, out, sets)
        config = ConfigManager().load(config_path, overrides)
        output_dir = config.experiment.output_dir
        _setup_logging(ctx, config)

        result = sweep_omega(config, grid, resume=resume)
        display.show_sweep(result)
    except Exception as e:
        _exit_on_error(display, e, output_dir)


@cli.command()
@click.argument("config_path", required=False, type=click.Path())
@click.option("--envs", default=",".join(DOMAIN_PRESETS), show_default=True,
              help="逗号分隔的环境列表")
@click.option("--agents", default=",".join(COMPARE_AGENTS), show_default=True,
              help="逗号分隔的智能体列表")
@click.option("--kinds", default=",".join(POLICY_KINDS), show_default=True,
              help="逗号分隔的探索策略列表")
@_override_options
@click.pass_context
def compare(ctx, config_path, envs, agents, kinds, seeds, steps, eval_interval, workers, out,
            sets, resume, brief, output_json):
    """在 环境 × 智能体 × 探索策略 网格上比较最终得分"""
    display = CliDisplay(brief, output_json)
    output_dir = out
    try:
        env_list = _parse_list(envs, str, "experiment.env_id")
        agent_list = _parse_list(agents, str, "experiment.agent")
        kind_list = _parse_list(kinds, str, "exploration.kind")
        overrides = _collect_overrides(seeds, steps, eval_interval, workers, out, sets)
        document = ConfigManager().read_document(config_path) if config_path else {}
        output_dir = out or document.get("experiment", {}).get("output_dir") or DEFAULT_COMPARE_DIR
        _setup_logging(ctx)

        result = compare_strategies(document, env_list, agent_list, kind_list,
                                    overrides=overrides, resume=resume)
        display.show_compare(result)
    except Exception as e:
        _exit_on_error(display, e, output_dir)


@cli.command()
@click.argument("directory", type=click.Path())
@click.option("--brief", "-b", is_flag=True, help="简要显示")
@click.option("--json", "output_json", is_flag=True, help="JSON格式输出")
@click.pass_context
def aggregate(ctx, directory, brief, output_json):
    """聚合结果目录中的评估记录"""
    display = CliDisplay(brief, output_json)
    try:
        _setup_logging(ctx)
        agg = aggregate_records(load_records(directory))
        display.show_aggregate(agg, load_run_summary(directory))
    except Exception as e:
        _exit_on_error(display, e)


@cli.command()
@click.argument("directory", type=click.Path())
@click.argument("out", type=click.Path())
@click.pass_context
def export(ctx, directory, out):
    """把结果目录导出为 curves.csv / aggregate.csv / summary.json"""
    display = CliDisplay()
    try:
        _setup_logging(ctx)
        records = load_records(directory)
        summary = load_run_summary(directory)
        config = summary.get("config")
        config_file = Path(directory) / "config.yaml"
        if not config and config_file.exists():
            config = ConfigManager().load(config_file).to_dict()
        failures = {int(s): n for s, n in summary.get("solver_failures", {}).items()}
        export_curves(records, out, config=config,
                      wall_clock=summary.get("wall_clock_seconds"), solver_failures=failures)
        display.show_success(f"已导出 {len(records)} 条评估记录到 {out}")
    except Exception as e:
        _exit_on_error(display, e, out)


@cli.group()
def config():
    """配置管理"""
    pass


@config.command("show")
@click.argument("config_path", required=False, type=click.Path())
@click.option("--set", "sets", multiple=True, help="覆盖任意配置项 section.key=value")
def config_show(config_path, sets):
    """显示解析后的完整配置（含默认值）"""
    display = CliDisplay()
    try:
        resolved = ConfigManager().load(config_path, _parse_sets(sets))
        click.echo(yaml.safe_dump(resolved.to_dict(), default_flow_style=False,
                                  allow_unicode=True, sort_keys=True), nl=False)
    except Exception as e:
        _exit_on_error(display, e)


@config.command("presets")
def config_presets():
    """列出可用的预设"""
    for name in ConfigManager().available_presets():
        click.echo(name)


@cli.command()
def envs():
    """列出已注册的环境"""
    click.echo(f"{'环境':<12} {'动作数':>6} {'观测维度':>8} {'回合上限':>8}")
    for env_id in available_envs():
        env = make_env(env_id)
        click.echo(f"{env_id:<14} {env.n_actions:>8} {env.observation_dim:>12} {env.episode_cap:>12}")


if __name__ == "__main__":
    cli()
