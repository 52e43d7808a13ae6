"""
命令行显示工具
提供评估进度、聚合曲线、ω 扫描与策略比较结果的展示
"""

import json
from typing import Any, Dict, Optional

import click

from ..core.harness import CellResult, CompareResult, SweepResult
from ..core.records import Aggregate
from ..utils.logger import get_logger

logger = get_logger(__name__)


class CliDisplay:
    """命令行显示工具"""

    def __init__(self, brief: bool = False, output_json: bool = False):
        self.brief = brief
        self.output_json = output_json

    def show_cell(self, cell: CellResult):
        """一个种子完成后的摘要行"""
        if self.output_json:
            return
        last = cell.records[-1] if cell.records else None
        score = f"{last.mean_return:.2f}" if last else "-"
        line = (f"[OK] 种子 {cell.seed}: {len(cell.records)} 个评估点, 最后评估 {score}, "
                f"{cell.episodes} 个回合, 用时 {cell.wall_clock:.1f}s")
        if cell.solver_failures:
            line += click.style(f", β 求解失败 {cell.solver_failures} 次", fg="yellow")
        click.echo(line)

    def show_aggregate(self, agg: Aggregate, summary: Optional[Dict[str, Any]] = None):
        """
        显示聚合结果

        Args:
            agg: 聚合曲线
            summary: 运行摘要（可选，用于显示求解失败次数等）
        """
        if self.output_json:
            data = agg.to_dict()
            if summary:
                data["summary"] = summary
            click.echo(json.dumps(data, indent=2, ensure_ascii=False))
            return

        if self.brief:
            click.echo(f"最终得分: {agg.final_score:.4f} (种子 {', '.join(map(str, agg.seeds))})")
            return

        click.echo("==== " + click.style("评估曲线聚合", bold=True, fg="blue") + " ====")
        click.echo(f"种子: {', '.join(map(str, agg.seeds))}")
        click.echo(f"{'步数':>10}  {'均值':>12}  {'标准差':>12}")
        click.echo("-" * 40)
        for p in agg.points:
            click.echo(f"{p.step:>12}  {p.mean:>14.4f}  {p.std:>15.4f}")
        click.echo("-" * 40)
        click.echo(click.style(f"最终得分（最后 5 次评估均值）: {agg.final_score:.4f}", bold=True))
        if summary and any(summary.get("solver_failures", {}).values()):
            self.show_warning(f"β 求解失败次数: {summary['solver_failures']}")

    def show_sweep(self, result: SweepResult):
        """显示 ω 扫描表"""
        if self.output_json:
            click.echo(json.dumps(result.to_dict(), indent=2, ensure_ascii=False))
            return
        click.echo("==== " + click.style("ω 网格扫描", bold=True, fg="blue") + " ====")
        for row in result.rows:
            marker = click.style(" <- 最佳", fg="green") if row.omega == result.best_omega else ""
            click.echo(f"  ω = {row.omega:<6g} 最终得分 {row.final_score:.4f}{marker}")

    def show_compare(self, result: CompareResult):
        """按 (环境, 智能体) 分组显示各探索策略的最终得分，标出最佳者"""
        if self.output_json:
            click.echo(json.dumps(result.to_dict(), indent=2, ensure_ascii=False))
            return
        click.echo("==== " + click.style("探索策略比较", bold=True, fg="blue") + " ====")
        groups = list(dict.fromkeys((r.env_id, r.agent) for r in result.rows))
        for env_id, agent in groups:
            best = result.best(env_id, agent)
            click.echo(click.style(f"  {env_id} / {agent}", bold=True))
            for row in result.rows:
                if (row.env_id, row.agent) != (env_id, agent):
                    continue
                marker = click.style(" <- 最佳", fg="green") if row == best else ""
                click.echo(f"    {row.exploration:<15} 最终得分 {row.final_score:.4f}{marker}")

    def show_error(self, message: str, suggestion: Optional[str] = None):
        """显示错误信息"""
        click.echo(click.style(f"[X] {message}", fg="red"), err=True)
        if suggestion:
            click.echo(click.style(f"[!] {suggestion}", fg="yellow"), err=True)

    def show_success(self, message: str):
        if not self.output_json:
            click.echo(click.style(f"[OK] {message}", fg="green"))

    def show_warning(self, message: str):
        click.echo(click.style(f"[!] {message}", fg="yellow"), err=True)
