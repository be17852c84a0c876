"""Command-line shell: parse a config, run one subcommand, write artifacts.

Usage:
    chcontrol <subcommand> <config_path> [section.key=value ...]

Subcommands: simulate, optimize, grad-check, taylor, oracle,
check-hypotheses.  Exit codes: 0 pass, 1 criteria failure, 2 usage or
config error, 3 numerical divergence.  The environment variable RUN_SEED,
when set, overrides every seed in the configuration and the built-in seed
lists.  Run logs contain no timestamps (those go to a .meta sidecar), so
identical configurations produce bitwise-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import (ConfigError, FieldExpr, RunConfig, apply_overrides, build_grid,
                     build_initial_control, build_params, echo_text, parse_config)
from .forward import ControlSchedule, DivergenceError, simulate
from .grid import CgNonConvergenceError, Field, integrate
from .model import check_hypotheses, f_deriv, p_deriv, preset_field
from .optimize import (OptimOptions, cost_taylor_sweep, directional_derivative_check,
                       kkt_report, projected_gradient)
from .sensitivity import (dot_product_test, fit_loglog_slope, frechet_remainder_sweep,
                          solve_adjoint)
from .snapshots import write_snapshot

USAGE = """usage: chcontrol <subcommand> <config_path> [section.key=value ...]
subcommands:
  simulate          forward run with snapshots and diagnostics
  optimize          projected-gradient descent on the tracking cost
  grad-check        adjoint/linearization transpose identities
  taylor            state and cost Taylor-remainder sweeps
  oracle            spatially constant run against an adaptive ODE solve
  check-hypotheses  structural checks on the model ingredients
exit codes: 0 pass, 1 criteria failure, 2 usage/config error, 3 divergence
"""

_FLOAT_FMT = repr


def _fmt(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT(value)
    return str(value)


def _kv_line(**pairs) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in pairs.items())


class RunWriter:
    """Per-run output directory: echoed config, log lines, snapshots."""

    def __init__(self, cfg: RunConfig):
        self.outdir = Path(cfg["io.outdir"])
        self.outdir.mkdir(parents=True, exist_ok=True)
        (self.outdir / "config.echo").write_text(echo_text(cfg), encoding="utf-8")
        self._log_lines: list[str] = []
        (self.outdir / "run.meta").write_text(
            f"started_unix={time.time()!r}\n", encoding="utf-8")

    def log(self, **pairs) -> None:
        self._log_lines.append(_kv_line(**pairs))

    def flush(self) -> None:
        (self.outdir / "run.log").write_text(
            "\n".join(self._log_lines) + ("\n" if self._log_lines else ""), encoding="utf-8")

    def snapshot(self, field: Field, t: float, name: str) -> None:
        write_snapshot(field, t, self.outdir / name)


def _seed_override(cfg: RunConfig) -> RunConfig:
    seed_env = os.environ.get("RUN_SEED")
    if not seed_env:
        return cfg
    seed = int(seed_env)
    values = dict(cfg.values)
    for key, value in values.items():
        if isinstance(value, FieldExpr):
            values[key] = value.with_seed(seed)
    return RunConfig(values=values)


def _seeds(default=(0, 1, 2)) -> list[int]:
    seed_env = os.environ.get("RUN_SEED")
    if seed_env:
        return [int(seed_env)]
    return list(default)


def cmd_simulate(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    params = build_params(cfg, grid)
    u = build_initial_control(cfg, grid, params)
    writer = RunWriter(cfg)
    every = cfg["io.snapshot_every"]
    traj = simulate(params, u)
    for n in range(traj.n_steps + 1):
        if n % every == 0 or n == traj.n_steps:
            writer.snapshot(traj.phi[n], traj.time(n), f"phi_{n:06d}.csv")
            writer.snapshot(traj.sigma[n], traj.time(n), f"sigma_{n:06d}.csv")
    writer.snapshot(traj.phi[-1], traj.time(traj.n_steps), "phi_final.csv")
    writer.snapshot(traj.sigma[-1], traj.time(traj.n_steps), "sigma_final.csv")
    for n in range(traj.n_steps):
        writer.log(step=n, t=traj.time(n + 1),
                   mass=integrate(traj.phi[n + 1]) + integrate(traj.sigma[n + 1]),
                   mass_residual=float(traj.mass_residuals[n]),
                   energy=float(traj.energies[n + 1]),
                   phi_max=traj.phi[n + 1].max_abs())
    writer.flush()
    print(_kv_line(subcommand="simulate", steps=traj.n_steps,
                   final_energy=float(traj.energies[-1]),
                   max_mass_residual=float(np.max(np.abs(traj.mass_residuals)))))
    return 0


def cmd_optimize(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    params = build_params(cfg, grid)
    u0 = build_initial_control(cfg, grid, params)
    writer = RunWriter(cfg)
    opts = OptimOptions(max_iters=cfg["opt.max_iters"], tol=cfg["opt.tol"],
                        armijo_c=cfg["opt.armijo_c"], alpha0=cfg["opt.alpha0"],
                        alpha_shrink=cfg["opt.alpha_shrink"])
    result = projected_gradient(params, u0, opts)
    for k, cost in enumerate(result.cost_history):
        writer.log(iter=k, cost=cost)
    traj = simulate(params, result.control)
    adjoint = solve_adjoint(params, traj)
    # Pointwise audit at the standard tolerance; the stopping rule above is an
    # integrated measure and lives on a different scale.
    report = kkt_report(params, result.control, adjoint, tol=1e-5)
    control_dir = writer.outdir / "control_final"
    control_dir.mkdir(exist_ok=True)
    for n in range(len(result.control)):
        write_snapshot(result.control[n], n * params.tau, control_dir / f"u_{n:06d}.csv")
    writer.log(termination=result.termination_reason, iterations=result.iterations,
               final_cost=result.cost_history[-1], kkt_residual=result.kkt_residual,
               kkt_violations=report.violations, worst_violation=report.worst_violation)
    writer.flush()
    print(_kv_line(subcommand="optimize", termination=result.termination_reason,
                   iterations=result.iterations, final_cost=result.cost_history[-1],
                   kkt_residual=result.kkt_residual, kkt_violations=report.violations))
    return 0 if result.termination_reason == "tolerance_met" else 1


def cmd_grad_check(cfg: RunConfig, bound: float = 1e-10) -> int:
    grid = build_grid(cfg)
    params = build_params(cfg, grid)
    n_steps = min(params.n_steps, 16)
    worst = 0.0
    for seed in _seeds():
        gap = dot_product_test(params, grid, n_steps, seed)
        worst = max(worst, gap)
        print(_kv_line(subcommand="grad-check", seed=seed, discrepancy=gap))
    print(_kv_line(subcommand="grad-check", max_discrepancy=worst, bound=bound,
                   ok=str(worst <= bound).lower()))
    return 0 if worst <= bound else 1


def _direction_schedule(grid, n_steps: int, seed: int, amplitude: float) -> ControlSchedule:
    fields = [preset_field("filtered_noise", grid, seed=seed * 1009 + n, amplitude=amplitude)
              for n in range(n_steps)]
    return ControlSchedule(grid, fields)


def cmd_taylor(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    params = build_params(cfg, grid)
    seed = _seeds(default=(2024,))[0]
    u = build_initial_control(cfg, grid, params)
    # A direction with O(1) pairing keeps the small-eps remainders well above
    # the linear-solver noise floor.
    h = _direction_schedule(grid, params.n_steps, seed, amplitude=2.0)

    def emit_rows(sweep, rows):
        import math as _math

        prev = None
        for eps, rem in rows:
            if prev is None:
                print(_kv_line(subcommand="taylor", sweep=sweep, eps=eps, remainder=rem))
            else:
                order = _math.log(prev[1] / rem) / _math.log(prev[0] / eps)
                print(_kv_line(subcommand="taylor", sweep=sweep, eps=eps, remainder=rem,
                               order=order))
            prev = (eps, rem)

    state_rows = frechet_remainder_sweep(params, u, h)
    state_slope = fit_loglog_slope(state_rows)
    emit_rows("state", state_rows)
    state_ok = 1.9 <= state_slope <= 2.1
    print(_kv_line(subcommand="taylor", sweep="state", slope=state_slope,
                   ok=str(state_ok).lower()))

    cost_rows, cost_slope, pairing = cost_taylor_sweep(params, u, h)
    emit_rows("cost", cost_rows)
    cost_ok = 1.9 <= cost_slope <= 2.1
    print(_kv_line(subcommand="taylor", sweep="cost", slope=cost_slope,
                   pairing=pairing, ok=str(cost_ok).lower()))

    rel = directional_derivative_check(params, u, h, eps=1e-3)
    dir_ok = rel <= 1e-6
    print(_kv_line(subcommand="taylor", sweep="directional", eps=1e-3, rel_error=rel,
                   ok=str(dir_ok).lower()))
    return 0 if (state_ok and cost_ok and dir_ok) else 1


def cmd_oracle(cfg: RunConfig) -> int:
    from scipy.integrate import solve_ivp

    grid = build_grid(cfg)
    params = build_params(cfg, grid)
    for key in ("init.phi0", "init.sigma0", "opt.u0"):
        if cfg[key].kind != "constant":
            raise ConfigError("the oracle subcommand needs constant presets", key=key)
    a0 = float(cfg["init.phi0"].arg("value"))
    b0 = float(cfg["init.sigma0"].arg("value"))
    c = float(cfg["opt.u0"].arg("value"))
    t_final = params.t_final

    def rhs(_t, y):
        exchange = p_deriv(params.proliferation, 0, y[0]) \
            * (y[1] - f_deriv(params.potential, 1, y[0]))
        return [exchange, -exchange + c]

    ode = solve_ivp(rhs, (0.0, t_final), [a0, b0], rtol=1e-11, atol=1e-13,
                    dense_output=True)
    ref = ode.y[:, -1]

    errors = []
    for tau in (params.tau, params.tau / 2, params.tau / 4):
        p = dataclasses.replace(params, tau=tau, t_final=t_final,
                                phi_q=None, phi_omega=None)
        u = ControlSchedule.constant(grid, p.n_steps, c)
        traj = simulate(p, u, phi0=Field.full(grid, a0), sigma0=Field.full(grid, b0))
        got = np.array([float(traj.phi[-1].values.flat[0]),
                        float(traj.sigma[-1].values.flat[0])])
        err = float(np.max(np.abs(got - ref)) / max(1.0, float(np.max(np.abs(ref)))))
        errors.append(err)
        print(_kv_line(subcommand="oracle", tau=tau, rel_error=err))
    orders = [float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)]
    order = float(np.mean(orders))
    ok = 0.9 <= order <= 1.1 and min(errors) <= 1e-3
    print(_kv_line(subcommand="oracle", order=order, min_rel_error=min(errors),
                   ok=str(ok).lower()))
    return 0 if ok else 1


def cmd_check_hypotheses(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    params = build_params(cfg, grid)
    report = check_hypotheses(params)
    for line in report.lines():
        print(_kv_line(subcommand="check-hypotheses") + " " + line)
    return 0 if report.passed else 1


_SUBCOMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "grad-check": cmd_grad_check,
    "taylor": cmd_taylor,
    "oracle": cmd_oracle,
    "check-hypotheses": cmd_check_hypotheses,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(USAGE, end="")
        return 0 if argv and argv[0] in ("-h", "--help", "help") else 2
    name = argv[0]
    if name not in _SUBCOMMANDS:
        print(f"error=usage detail={name!r} is not a subcommand", file=sys.stderr)
        print(USAGE, end="", file=sys.stderr)
        return 2
    if len(argv) < 2:
        print("error=usage detail=missing config path", file=sys.stderr)
        return 2
    config_path = Path(argv[1])
    try:
        cfg = parse_config(config_path.read_text(encoding="utf-8"))
        cfg = apply_overrides(cfg, argv[2:])
        cfg = _seed_override(cfg)
    except FileNotFoundError:
        print(f"error=config detail=no such file: {config_path}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error=config detail={exc}", file=sys.stderr)
        return 2
    try:
        return _SUBCOMMANDS[name](cfg)
    except ConfigError as exc:
        print(f"error=config detail={exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error=divergence step={exc.step_index} detail={exc}", file=sys.stderr)
        return 3
    except CgNonConvergenceError as exc:
        print(f"error=solver residual={exc.residual!r} iterations={exc.iterations} "
              f"detail={exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
