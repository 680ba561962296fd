"""Command-line interface for the kinetic Fokker-Planck toolkit.
动理学 Fokker-Planck 工具包的命令行界面。
"""

import argparse
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__
from .config import (
    ConfigError,
    RunConfig,
    build_alpha,
    build_control,
    build_domain,
    build_grid,
    build_initial,
    build_potential,
    build_profile,
    load_config,
)
from .control import OptimizerOptions, TrackingProblem, uniqueness_certificate
from .evolution import ControlSignal, SolverBlowUpError, direct_march, picard_solve
from .particles import density_confidence, meanfield_compare, run_replicate, sample_ensemble
from .reports import IncompatibleRunsError, RunReporter, compare_runs, read_csv, read_dump
from .verify import (
    CONSTANTS_VERSION,
    ConstantsTable,
    check_identity_suite,
    check_inequality_suite,
    estimate_constants,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_BLOWUP = 3
EXIT_STALLED = 4

DEFAULT_OUT = "out"


class RunContext:
    """Objects built once from a validated config and shared by the mode handlers."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.domain = build_domain(cfg)
        self.U = build_potential(cfg, self.domain)
        self.alpha = build_alpha(cfg, self.domain)
        self.grid = build_grid(cfg)
        self.y0 = build_initial(cfg, self.domain)

    def control(self) -> ControlSignal:
        values = None
        if self.cfg.control.file is not None:
            columns = read_csv(Path(self.cfg.control.file))
            if "u" not in columns:
                raise ConfigError([("control.file", "CSV needs a 'u' column")])
            values = columns["u"]
        return build_control(self.cfg, self.grid, values)

    def constants(self) -> ConstantsTable:
        ver = self.cfg.verify
        if ver.constants_file is not None:
            table = ConstantsTable.load(ver.constants_file)
            if table.domain != self.domain.to_dict():
                raise ConfigError([("verify.constants_file", "table was estimated on a different domain")])
            return table
        k0, k1, k2 = ver.solution_bounds
        return estimate_constants(
            self.domain, self.U, self.alpha, self.grid,
            seed=self.cfg.seed,
            batch_size=ver.batch_size,
            n_batches=ver.n_batches,
            solution_args={"k0": k0, "k1": k1, "k2": k2},
            n_bound_samples=ver.bound_samples,
        )


def _trajectory_summary(trajectory) -> Dict[str, Any]:
    mass = trajectory.mass_mode
    return {
        "norm_initial": float(trajectory.normY_history[0]),
        "norm_final": float(trajectory.normY_history[-1]),
        "triple_norm": trajectory.triple_norm,
        "mass_drift": float(abs(mass - mass[0]).max()),
        "stability_ratio": trajectory.stability_ratio,
    }


def simulate_command(ctx: RunContext, reporter: RunReporter) -> Dict[str, Any]:
    """Execute the simulate mode.
    执行直接推进模式。
    """
    u = ctx.control()
    print(f"Marching {ctx.grid.Nt} steps (T={ctx.grid.T}, scheme={ctx.cfg.time.scheme})...")
    trajectory = direct_march(ctx.y0, u, ctx.grid, ctx.U, ctx.alpha,
                              scheme=ctx.cfg.time.scheme, blowup_factor=ctx.cfg.time.blowup_factor)
    reporter.write_trajectory(trajectory)
    reporter.write_control(u.values, ctx.grid)
    reporter.write_dump(trajectory)
    summary = _trajectory_summary(trajectory)
    print(f"✓ ||y(T)||_Y = {summary['norm_final']:.6e} (||y0||_Y = {summary['norm_initial']:.6e})")
    return {"trajectory": summary}


def picard_command(ctx: RunContext, reporter: RunReporter) -> Dict[str, Any]:
    """Execute the picard mode.
    执行 Picard 迭代模式。
    """
    u = ctx.control()
    print("Estimating constants for the feasibility report...")
    constants = ctx.constants()
    reporter.write_json(constants.to_dict(), "constants.json")
    tm = ctx.cfg.time
    trajectory, report = picard_solve(
        ctx.y0, u, ctx.grid, ctx.U, ctx.alpha,
        tol=tm.picard_tol, max_iter=tm.picard_max_iter, scheme=tm.scheme,
        constants={"c_hat": constants.c_hat, "n_norm": constants.n_norm},
        blowup_factor=tm.blowup_factor,
    )
    reporter.write_trajectory(trajectory)
    reporter.write_picard(report)
    reporter.write_control(u.values, ctx.grid)
    mark = "✓" if report.converged else "✗"
    print(f"{mark} Picard: {report.iterates} iterates, residual {report.residuals[-1]:.3e}, "
          f"observed rate {report.observed_rate:.3e}")
    return {"trajectory": _trajectory_summary(trajectory), "picard": report.to_dict()}


def build_target(ctx: RunContext):
    """Target trajectory: a stored dump or the flow driven by a known constant control."""
    ctl = ctx.cfg.control
    if ctl.target == "file":
        target = read_dump(Path(ctl.target_file))
        if target.domain != ctx.domain or target.grid != ctx.grid:
            raise ConfigError([("control.target_file", "dump domain or time grid does not match the run")])
        return target
    start = build_profile(ctl.target_profile, ctx.domain, ctl.target_amplitude, ctx.cfg.initial.width, ctx.cfg.seed)
    known = ControlSignal.constant(ctx.grid.Nt, ctl.target_control, ctl.u_min, ctl.u_max)
    return direct_march(start, known, ctx.grid, ctx.U, ctx.alpha, blowup_factor=ctx.cfg.time.blowup_factor)


def optimize_command(ctx: RunContext, reporter: RunReporter) -> Dict[str, Any]:
    """Execute the optimize mode.
    执行最优控制模式。
    """
    ctl = ctx.cfg.control
    print("Building target trajectory...")
    target = build_target(ctx)
    problem = TrackingProblem(ctx.y0, target, ctl.beta, ctx.U, ctx.alpha)
    u0 = ControlSignal.zeros(ctx.grid.Nt, ctl.u_min, ctl.u_max)
    opts = OptimizerOptions(max_iter=ctl.max_iter, tol_factor=ctl.tol_factor)
    print(f"Running projected gradient descent (beta={ctl.beta}, max_iter={ctl.max_iter})...")
    result = problem.solve(u0, opts)
    optimal = problem.forward(result.control)

    reporter.write_optimizer_log(result.log)
    reporter.write_control(result.control.values, ctx.grid)
    reporter.write_trajectory(optimal)

    print("Estimating constants for the uniqueness certificate...")
    constants = ctx.constants()
    reporter.write_json(constants.to_dict(), "constants.json")
    certificate = uniqueness_certificate(u0, ctx.y0, target, constants)

    mark = "✗" if result.stalled else "✓"
    print(f"{mark} Cost {result.log[0]['cost']:.6e} -> {result.cost.total:.6e} "
          f"after {result.iterations} iterations")
    print(f"  Uniqueness certificate: {'holds' if certificate.holds else 'violated ' + str(certificate.violations)}")
    return {
        "trajectory": _trajectory_summary(optimal),
        "optimization": {
            "iterations": result.iterations,
            "converged": result.converged,
            "stalled": result.stalled,
            "initial_cost": result.log[0]["cost"],
            "cost": result.cost.to_dict(),
            "certificate": certificate.to_dict(),
        },
    }


def particles_command(ctx: RunContext, reporter: RunReporter) -> Dict[str, Any]:
    """Execute the particles mode.
    执行粒子模拟模式。
    """
    par = ctx.cfg.particles
    u = ctx.control()
    print(f"Marching PDE oracle ({ctx.grid.Nt} steps)...")
    pde = direct_march(ctx.y0, u, ctx.grid, ctx.U, ctx.alpha,
                       scheme=ctx.cfg.time.scheme, blowup_factor=ctx.cfg.time.blowup_factor)

    n_steps = int(round(par.T / par.dt))
    cells = [min(int(n * par.dt / ctx.grid.dt), ctx.grid.Nt - 1) for n in range(n_steps)]
    controls = u.values[cells]
    record = sorted({int(round(t / par.dt)) for t in par.record_times})

    runs = []
    for rep in range(par.replicates):
        print(f"Replicate {rep + 1}/{par.replicates} (m={par.m})...", end=" ", flush=True)
        runs.append(run_replicate(ctx.y0, controls, par.dt, ctx.U, ctx.alpha, par.m, record,
                                  seed=ctx.cfg.seed, replicate=rep, noise_on=par.noise, method=par.method))
        print("✓")
    report = meanfield_compare(runs, pde, [step * par.dt for step in record], par.dt)
    band = density_confidence(runs[0][record[0]])

    reporter.write_meanfield(report)
    reporter.write_particle_density(runs, par.dt)
    reporter.write_stats(runs, par.dt)
    reporter.write_snapshot(sample_ensemble(ctx.y0, par.m, seed=ctx.cfg.seed, replicate=0))
    for row in report.rows:
        print(f"  t={row.time:.3f}: density rms {row.density_rms:.3e} vs se {row.density_se:.3e}")
    return {"particles": {"m": report.m, "replicates": report.replicates,
                          "rows": [row.to_dict() for row in report.rows], "density_band_997": band, "flags": report.flags}}


def verify_command(ctx: RunContext, reporter: RunReporter) -> Dict[str, Any]:
    """Execute the verify mode.
    执行数值验证模式。
    """
    ver = ctx.cfg.verify
    print(f"Identity suite ({ver.n_identity} samples)...")
    checks = check_identity_suite(ctx.domain, ctx.U, ctx.alpha, n_samples=ver.n_identity, seed=ctx.cfg.seed)
    print(f"Inequality suite ({ver.n_inequality} samples)...")
    checks += check_inequality_suite(ctx.domain, ctx.U, ctx.alpha, n_samples=ver.n_inequality,
                                     seed=ctx.cfg.seed + 1, n_trajectories=ver.n_trajectories)
    reporter.write_checks(checks)
    print("Estimating constants...")
    constants = ctx.constants()
    reporter.write_json(constants.to_dict(), "constants.json")
    for c in checks:
        print(f"  {'✓' if c.passed else '✗'} {c.name}: worst {c.worst_ratio:.3e}")
    return {"checks": [c.to_dict() for c in checks], "constants": constants.to_dict()}


COMMANDS = {
    "simulate": simulate_command,
    "picard": picard_command,
    "optimize": optimize_command,
    "particles": particles_command,
    "verify": verify_command,
}


def run(cfg: RunConfig) -> int:
    """Dispatch a validated config, write artifacts and the manifest; return the exit status.
    分发已校验的配置，写出产物与清单，返回退出码。
    """
    out_dir = Path(cfg.out or DEFAULT_OUT)
    reporter = RunReporter(out_dir)
    logger.info("running mode %s into %s", cfg.mode, out_dir)
    started = datetime.now().isoformat()
    clock = time.perf_counter()
    status, exit_code, summary = "ok", EXIT_OK, {}
    try:
        ctx = RunContext(cfg)
        summary = COMMANDS[cfg.mode](ctx, reporter)
    except SolverBlowUpError as e:
        print(f"Error: {e}", file=sys.stderr)
        status, exit_code = "blow-up", EXIT_BLOWUP
        summary = {"error": str(e), "step": e.step, "norm": e.norm}
    except ConfigError as e:
        for name, msg in e.errors:
            print(f"Error: {name}: {msg}", file=sys.stderr)
        status, exit_code = "invalid", EXIT_INVALID
        summary = {"error": str(e)}
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        status, exit_code = "invalid", EXIT_INVALID
        summary = {"error": str(e)}

    if exit_code == EXIT_OK:
        if summary.get("optimization", {}).get("stalled"):
            status, exit_code = "stalled", EXIT_STALLED
        elif any(not c["passed"] for c in summary.get("checks", [])):
            status, exit_code = "checks-failed", EXIT_INVALID

    metadata = {
        "version": __version__,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "started": started,
        "wall_time_s": time.perf_counter() - clock,
        "domain": build_domain(cfg).to_dict(),
        "grid": {"T": cfg.time.T, "Nt": cfg.time.Nt},
        "constants_version": CONSTANTS_VERSION,
        "status": status,
        "exit_code": exit_code,
    }
    summary = {"mode": cfg.mode, "metadata": metadata, **summary}
    reporter.write_json(summary, "summary.json")
    reporter.write_markdown(summary)
    manifest = reporter.write_manifest(cfg.to_dict(), metadata)
    print(f"Manifest saved to: {manifest}")
    if exit_code == EXIT_OK:
        print(f"\n✓ {cfg.mode} complete!")
    return exit_code


def compare_command(args) -> int:
    """Execute the compare command.
    执行比较命令。
    """
    try:
        result = compare_runs(args.runs, tol=args.tol)
    except IncompatibleRunsError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    for pair in result["pairs"]:
        mark = "✓" if pair["within_tol"] else "✗"
        print(f"{mark} {pair['a']} vs {pair['b']}: max diff {pair['max_diff']:.3e}")
        density = pair.get("particle_density")
        if density:
            print(f"  particle density rms z = {density['rms_z']:.2f} (within 3 se: {density['within']})")
    for col, orders in result.get("observed_order", {}).items():
        print(f"  {col}: observed order {', '.join(f'{o:.2f}' for o in orders)}")
    if "convergence_note" in result:
        print(f"  {result['convergence_note']}")

    if args.out:
        out_path = Path(args.out)
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "compare.json", "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2, sort_keys=True)
        print(f"Comparison saved to: {out_path / 'compare.json'}")
    return EXIT_OK


def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", default=None, help="Path to JSON config file (JSON 配置文件路径)")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (随机种子)")
    parser.add_argument(
        "--out",
        default=None,
        help="Output directory (default: from KFP_OUT_DIR env or ./out) (输出目录)"
    )
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config field, e.g. domain.Nx=32 (覆盖配置字段)"
    )
    parser.add_argument("--verbose", action="store_true", help="Log solver progress (输出求解日志)")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for CLI.
    CLI的主入口点。
    """
    parser = argparse.ArgumentParser(
        prog="python -m src.cli",
        description="Spectral solver and optimal control for the controlled kinetic Fokker-Planck equation"
                    "\n受控动理学 Fokker-Planck 方程的谱方法求解与最优控制"
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    helps = {
        "simulate": "Direct nonlinear march (直接非线性推进)",
        "picard": "Picard fixed-point solve with feasibility report (Picard 不动点求解)",
        "optimize": "Projected gradient tracking control (投影梯度跟踪控制)",
        "particles": "Particle ensemble versus PDE (粒子系综与 PDE 对比)",
        "verify": "Identity and inequality suites plus constants (恒等式与不等式验证)",
    }
    for name, text in helps.items():
        _add_run_arguments(subparsers.add_parser(name, help=text))

    compare_parser = subparsers.add_parser("compare", help="Diff run directories (比较运行目录)")
    compare_parser.add_argument("runs", nargs="+", help="Run directories, coarse to fine (运行目录)")
    compare_parser.add_argument("--tol", type=float, default=0.0, help="Allowed max difference (允许的最大差异)")
    compare_parser.add_argument("--out", default=None, help="Directory for compare.json (输出目录)")

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    if args.command == "compare":
        logging.basicConfig(level=logging.WARNING)
        if len(args.runs) < 2:
            print("Error: compare needs at least two run directories", file=sys.stderr)
            return EXIT_USAGE
        return compare_command(args)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    overrides = list(args.override) + [f"mode={json.dumps(args.command)}"]
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        for name, msg in e.errors:
            print(f"Error: {name}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
