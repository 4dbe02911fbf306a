"""
bulkflow - 水平集族上的曲面 Stokes / Navier-Stokes 流动求解入口

子命令:
    solve     单次定常求解，输出 VTK 与报告
    converge  加密序列求解，输出误差与收敛阶 CSV
    march     Crank-Nicolson 时间推进，输出逐步 CSV 与定期 VTK 快照
"""

import argparse
import math
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np

# 确保能够导入模块
current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

# 导入自定义模块
from utils import logger
from utils.config import RunConfig, parse_config
from utils.output_writer import collect_columns, render_table, write_csv_series, write_report, write_vtk
from bulkflow.core.benchmarks import BenchmarkCase, TimeConfig, get_case
from bulkflow.core.errors import BulkFlowError, ConfigError, ParseError
from bulkflow.core.flow_assembly import (
    AssemblyOptions,
    FlowState,
    assemble_base,
    crank_nicolson_advance,
    picard_solve,
)
from bulkflow.core.verify import (
    RATE_METRICS,
    ErrorReport,
    convergence_rates,
    error_report,
    line_profile,
    profile_self_convergence,
    surface_quantity,
    velocity_l2_error,
)


class BulkFlowRunner:
    """按 RunConfig 组织一次运行并写出结果文件"""

    def __init__(self, run_config: RunConfig):
        """初始化运行器"""
        self.run_config = run_config
        self.options = AssemblyOptions.from_config(run_config)
        self.output_dir = os.path.join(run_config.output_dir, run_config.case)
        self.artifacts: List[str] = []

    # ------------------------------------------------------------------ 公共部分
    def _path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _stationary_solve(self, case: BenchmarkCase, spaces, problem=None):
        cfg = self.run_config
        return picard_solve(problem or case.problem, spaces, case.levelset, cfg.picard_tol, cfg.picard_max_iter,
                            self.options, relaxation=cfg.picard_relaxation, solver=cfg.linear_solver)

    def _probe_values(self, case: BenchmarkCase, spaces, state: FlowState) -> Dict[str, float]:
        """各探测曲面上的动能或前后压差"""
        values = {}
        for probe in case.probes:
            if len(probe.points):
                values[f"ekin_{probe.name}"] = surface_quantity(probe, state, spaces, case.levelset,
                                                                "kinetic_energy", rho=case.problem.rho)
            if {"front", "back"} <= set(probe.pressure_points):
                values[f"dp_{probe.name}"] = surface_quantity(probe, state, spaces, case.levelset,
                                                              "pressure_diff", points=("front", "back"))
        return values

    def _write_vtk(self, case: BenchmarkCase, spaces, state: FlowState, name: str) -> None:
        if self.run_config.write_vtk:
            self.artifacts.append(write_vtk(spaces, state, case.levelset, self._path(name)))

    def _write_csv(self, name: str, rows: Sequence[Dict[str, float]]) -> None:
        if self.run_config.write_csv:
            columns = collect_columns(rows)
            self.artifacts.append(write_csv_series(self._path(name), columns, rows))

    def _write_report(self, title: str, summary: Dict[str, object], tables=()) -> None:
        if self.run_config.write_report:
            self.artifacts.append(write_report(self._path("report.txt"), title, summary, tables))

    def _settings(self) -> Dict[str, object]:
        cfg = self.run_config
        return {
            "case": cfg.case,
            "orders (q_geom, q_u, q_p)": (cfg.q_geom, cfg.q_u, cfg.q_p),
            "pressure regime": cfg.pressure_regime,
            "stabilization": cfg.stabilization,
            "mu": cfg.mu,
            "rho": cfg.rho,
        }

    # ------------------------------------------------------------------ 子命令
    def solve(self) -> Dict[str, object]:
        """单次定常求解"""
        case = get_case(self.run_config)
        spaces = case.build_spaces()
        state, history = self._stationary_solve(case, spaces)
        report = error_report(state, case.problem, case.exact_solution(), case.levelset, spaces, self.options)
        probes = self._probe_values(case, spaces, state)
        logger.info(f"求解完成: Picard 迭代 {len(history)} 次, 速度误差 {report.vel_l2:.6e}")

        for name, (start, end) in case.profiles.items():
            profile = line_profile(state, spaces, start, end, mapping=case.param_map)
            rows = [
                {"s": s, "x": x[0], "y": x[1], "z": x[2], "u": u[0], "v": u[1], "w": u[2], "p": p}
                for s, x, u, p in zip(profile["s"], profile["points"], profile["velocity"], profile["pressure"])
            ]
            self._write_csv(f"profile_{name}.csv", rows)
        self._write_vtk(case, spaces, state, f"{case.name}_L{self.run_config.refine_level}.vtu")

        summary = dict(self._settings())
        summary["picard history"] = ", ".join(f"{h:.3e}" for h in history)
        summary.update(report.as_row())
        summary.update(probes)
        self._write_report(f"bulkflow solve: {case.name}", summary)
        return {"state": state, "history": history, "report": report, "probes": probes}

    def converge(self) -> Dict[str, object]:
        """加密序列上的误差与收敛阶"""
        reports: List[ErrorReport] = []
        rows = []
        profiles: Dict[str, List[np.ndarray]] = {}
        for level in self.run_config.refine_levels:
            case = get_case(self.run_config, refine_level=level)
            spaces = case.build_spaces()
            state, _ = self._stationary_solve(case, spaces)
            report = error_report(state, case.problem, case.exact_solution(), case.levelset, spaces, self.options)
            for name, (start, end) in case.profiles.items():
                sampled = line_profile(state, spaces, start, end, mapping=case.param_map)
                profiles.setdefault(name, []).append(sampled["velocity"])
            row = {"level": level, "h": report.mesh_size}
            row.update({k: v for k, v in report.as_row().items() if k != "mesh_size"})
            if reports:
                previous = reports[-1]
                ratio = math.log(previous.mesh_size / report.mesh_size)
                for metric in RATE_METRICS:
                    old, new = getattr(previous, metric), getattr(report, metric)
                    row[f"rate_{metric}"] = math.log(old / new) / ratio if old > 0 and new > 0 else math.nan
            else:
                row.update({f"rate_{metric}": math.nan for metric in RATE_METRICS})
            reports.append(report)
            rows.append(row)
            logger.info(f"层级 {level}: h={report.mesh_size:.4e}, 速度误差 {report.vel_l2:.6e}")

        rates = {}
        if len(reports) >= 3:
            rates = convergence_rates(reports)
        else:
            logger.warning("加密层级少于 3 个，不拟合收敛阶")
        # 无解析解的算例用剖面自收敛
        self_convergence = {}
        if len(self.run_config.refine_levels) >= 2:
            for name, samples in profiles.items():
                result = profile_self_convergence(samples)
                self_convergence[name] = result
                logger.info(f"剖面 {name}: 相对变化 {result['rel_change']:.3e}, 观测阶 {result['observed_order']:.3f}")

        self._write_csv("convergence.csv", rows)
        summary = dict(self._settings())
        summary.update({f"fitted rate {k}": v for k, v in rates.items()})
        for name, result in self_convergence.items():
            summary.update({f"profile {name} {k}": v for k, v in result.items()})
        self._write_report(f"bulkflow converge: {self.run_config.case}", summary,
                           [render_table("convergence", collect_columns(rows), rows)])
        return {"reports": reports, "rates": rates, "rows": rows, "self_convergence": self_convergence}

    def march(self) -> Dict[str, object]:
        """Crank-Nicolson 时间推进"""
        cfg = self.run_config
        case = get_case(cfg)
        time = case.time
        if time is None:
            if cfg.dt is None or cfg.t_end is None:
                raise ConfigError(f"case '{case.name}' needs dt and t_end for time marching")
            time = TimeConfig(cfg.t_start, cfg.t_end, cfg.dt)
        spaces = case.build_spaces()
        problem = case.problem

        if case.name == "obstacle":
            # 非定常绕流从 Stokes 解出发
            state, _ = self._stationary_solve(case, spaces, replace(problem, advection=False))
            state = replace(state, time=time.t_start)
        else:
            state = case.initial_state(spaces)

        base = assemble_base(problem, spaces, case.levelset, self.options, state.time)
        rows = [self._step_row(case, spaces, state)]
        initial = dict(rows[0])
        self._add_normalized(rows[0], initial)
        for step in range(1, time.n_steps + 1):
            state = crank_nicolson_advance(problem, spaces, case.levelset, state, time.dt, cfg.picard_tol,
                                           cfg.picard_max_iter, self.options, base, cfg.linear_solver)
            row = self._step_row(case, spaces, state)
            self._add_normalized(row, initial)
            rows.append(row)
            logger.info(f"时间步 {step}/{time.n_steps}: t={state.time:.6g}")
            if step % cfg.vtk_every == 0 or step == time.n_steps:
                self._write_vtk(case, spaces, state, f"{case.name}_{step:05d}.vtu")

        self._write_csv("time_series.csv", rows)
        summary = dict(self._settings())
        summary.update({"dt": time.dt, "steps": time.n_steps})
        summary.update({k: v for k, v in rows[-1].items() if k != "t"})
        self._write_report(f"bulkflow march: {case.name}", summary)
        return {"state": state, "rows": rows}

    def _step_row(self, case: BenchmarkCase, spaces, state: FlowState) -> Dict[str, float]:
        row = {"t": state.time}
        row.update(self._probe_values(case, spaces, state))
        exact = case.exact_solution(state.time)
        if case.exact_at is not None and exact is not None:
            row["vel_l2"] = velocity_l2_error(state, exact, case.levelset, spaces, self.options)
        return row

    @staticmethod
    def _add_normalized(row: Dict[str, float], initial: Dict[str, float]) -> None:
        energies = [k for k in initial if k.startswith("ekin_")]
        for key in energies:
            row[f"norm_{key}"] = row[key] / initial[key] if initial[key] > 0 else math.nan
        if energies:
            row["norm_ekin_mean"] = sum(row[f"norm_{k}"] for k in energies) / len(energies)

    def run(self, command: str) -> Dict[str, object]:
        handlers = {"solve": self.solve, "converge": self.converge, "march": self.march}
        if command not in handlers:
            raise ConfigError(f"unknown command '{command}'")
        return handlers[command]()


def parse_overrides(items: Optional[Sequence[str]]) -> Dict[str, str]:
    overrides = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ParseError("override must look like key=value", key=item)
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bulkflow", description="Bulk trace FEM for surface flows on level sets")
    parser.add_argument("command", choices=["solve", "converge", "march"])
    parser.add_argument("--config", help="run document (INI)")
    parser.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE",
                        help="override a run setting; repeatable")
    return parser


def load_run_config(path: Optional[str], overrides: Dict[str, str]) -> RunConfig:
    text = ""
    if path:
        try:
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as e:
            raise ConfigError(f"cannot read run document {path}: {e}") from e
    return parse_config(text, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回进程退出码"""
    args = build_parser().parse_args(argv)
    try:
        run_config = load_run_config(args.config, parse_overrides(args.overrides))
        logger.info(f"开始运行: {args.command} / {run_config.case}")
        runner = BulkFlowRunner(run_config)
        runner.run(args.command)
        for path in runner.artifacts:
            logger.info(f"已写出: {path}")
        return 0
    except KeyboardInterrupt:
        logger.info("收到终止信号，程序结束")
        return 130
    except BulkFlowError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"程序运行时发生错误: {str(e)}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
