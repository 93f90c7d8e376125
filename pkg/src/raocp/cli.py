"""Benchmark harness: open-loop solves, horizon sweeps, closed-loop MPC.

Configuration comes from a JSON file (same keys as ``BenchConfig``) with
every command-line flag overriding its field.  Outputs are plot-ready CSV
files with documented headers:

- residuals_<solver>.csv : iter,l_calls,xi
- summary.csv            : solver,N,nx,iters,l_calls,wall_ms,status
- mpc_<solver>_r<k>.csv  : step,event,iters,l_calls,wall_ms,warm,x_norm,u_norm
- bench_kernels.csv      : backend,op,reps,total_s,per_call_us

Exit codes: 0 success, 1 configuration error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import cp as _cp
from . import model as _model
from . import splitting as _sp
from . import supermann as _sm
from ._backends import kernels as _kernels
from .errors import ValidationError

SOLVERS = ("cp", "supermann", "both")


@dataclass
class BenchConfig:
    n_x: int = 5
    n_u: int | None = None      # benchmark dynamics force n_u = n_x
    d: int = 2
    horizon: int = 7
    branch_probs: list = field(default_factory=lambda: [0.3, 0.7])
    alpha_risk: float = 0.95
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    solver: str = "both"
    max_iters: int = _cp.DEFAULT_MAX_ITERS
    c0: float = 0.99
    c1: float = 0.99
    c2: float = 0.99
    beta: float = 0.5
    sigma: float = 0.3
    lam: float = 1.5
    max_backtracks: int = 40
    aa_memory: int = 10
    rho_variant: str = "paper"
    mpc_steps: int = 20
    warm_start: bool = True
    realizations: int = 15
    seed: int = 0
    out_dir: str = "out"
    time_budget_s: float = 150.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValidationError(f"solver must be one of {SOLVERS}")
        if self.n_u is None:
            self.n_u = self.n_x
        if self.n_u != self.n_x:
            raise ValidationError(
                "the benchmark applies one input per state, so n_u must "
                "equal n_x")
        if self.n_x < 1 or self.d < 1 or self.horizon < 1:
            raise ValidationError("n_x, d and horizon must be >= 1")
        if len(self.branch_probs) != self.d:
            raise ValidationError("branch_probs must have d entries")
        if self.mpc_steps < 1 or self.realizations < 1:
            raise ValidationError("mpc_steps and realizations must be >= 1")

    def selected_solvers(self):
        return ("cp", "supermann") if self.solver == "both" else (self.solver,)

    def supermann_params(self) -> _sm.SupermannParams:
        return _sm.SupermannParams(
            c0=self.c0, c1=self.c1, c2=self.c2, beta=self.beta,
            sigma=self.sigma, lam=self.lam,
            max_backtracks=self.max_backtracks, aa_memory=self.aa_memory,
            rho_variant=self.rho_variant)

    def build_problem(self, horizon=None, initial_state=None) -> _model.Raocp:
        return _model.build_server_benchmark(
            self.n_x, self.d, horizon or self.horizon, self.branch_probs,
            self.alpha_risk, initial_state=initial_state)


def load_config(path=None, overrides=None, base: BenchConfig | None = None):
    data = dataclasses.asdict(base) if base else dataclasses.asdict(BenchConfig())
    data["n_u"] = None   # re-derived from n_x unless given explicitly
    if path:
        with open(path) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(data)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data.update(loaded)
    for key, val in (overrides or {}).items():
        if val is not None:
            data[key] = val
    return BenchConfig(**data)


def _solve(config, solver, p, prepared, warm_start=None, alpha=None,
           collect_trace=False):
    if solver == "cp":
        return _cp.solve_cp(
            p, alpha=alpha, eps_abs=config.eps_abs, eps_rel=config.eps_rel,
            max_iters=config.max_iters, warm_start=warm_start,
            prepared=prepared)
    return _sm.solve_supermann(
        p, alpha=alpha, params=config.supermann_params(),
        eps_abs=config.eps_abs, eps_rel=config.eps_rel,
        max_iters=config.max_iters, warm_start=warm_start, prepared=prepared,
        collect_trace=collect_trace)


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _summary_row(solver, config, horizon, report):
    return (solver, horizon, config.n_x, report.iterations, report.l_calls,
            f"{1000.0 * report.wall_time_s:.3f}", report.status)


def run_open_loop(config: BenchConfig, out_dir=None):
    """Solve one instance with each selected solver; write residual CSVs
    plus a summary table.  Returns {solver: SolveReport}."""
    from pathlib import Path

    out = Path(out_dir or config.out_dir)
    p = config.build_problem()
    prepared = _cp.prepare(p)
    alpha = _sp.default_alpha(p)

    reports = {}
    rows = []
    for solver in config.selected_solvers():
        _, _, report = _solve(config, solver, p, prepared, alpha=alpha,
                              collect_trace=True)
        reports[solver] = report
        _write_csv(out / f"residuals_{solver}.csv", ("iter", "l_calls", "xi"),
                   [(it, lc, f"{xi:.12e}") for it, lc, xi in report.history])
        if solver == "supermann" and report.extras.get("trace"):
            _write_csv(
                out / "trace_supermann.csv",
                ("k", "update", "tau", "omega", "omega_tilde", "xi", "l_calls"),
                [(k, upd, f"{tau:.6g}", f"{om:.12e}", f"{omt:.12e}",
                  f"{xi:.12e}", lc)
                 for k, upd, tau, om, omt, xi, lc in report.extras["trace"]])
        rows.append(_summary_row(solver, config, config.horizon, report))
    _write_csv(out / "summary.csv",
               ("solver", "N", "nx", "iters", "l_calls", "wall_ms", "status"),
               rows)
    return reports


def run_horizon_sweep(config: BenchConfig, horizons, out_dir=None):
    """Open-loop solves over ascending horizons with a wall-time budget.

    A solver whose solve exceeds the budget is not run at larger horizons.
    Returns the summary rows."""
    from pathlib import Path

    horizons = list(horizons)
    if horizons != sorted(horizons):
        raise ValidationError("horizons must be ascending")
    out = Path(out_dir or config.out_dir)
    rows = []
    over_budget = set()
    for horizon in horizons:
        active = [s for s in config.selected_solvers() if s not in over_budget]
        if not active:
            break
        p = config.build_problem(horizon=horizon)
        prepared = _cp.prepare(p)
        alpha = _sp.default_alpha(p)
        for solver in active:
            _, _, report = _solve(config, solver, p, prepared, alpha=alpha)
            rows.append(_summary_row(solver, config, horizon, report))
            if report.wall_time_s > config.time_budget_s:
                over_budget.add(solver)
    _write_csv(out / "summary.csv",
               ("solver", "N", "nx", "iters", "l_calls", "wall_ms", "status"),
               rows)
    return rows


@dataclass
class MpcTrace:
    """Closed-loop record of one realization."""

    solver: str
    realization: int
    events: list
    states: list           # length steps+1, each an n_x vector
    inputs: list           # length steps
    iters: list
    l_calls: list
    wall_ms: list
    warm: list
    statuses: list

    def rows(self):
        return [(k + 1, self.events[k], self.iters[k], self.l_calls[k],
                 f"{self.wall_ms[k]:.3f}", int(self.warm[k]),
                 f"{np.linalg.norm(self.states[k]):.9e}",
                 f"{np.linalg.norm(self.inputs[k]):.9e}")
                for k in range(len(self.events))]

    def replay_error(self, dynamics: _model.Dynamics) -> float:
        err = 0.0
        for k, w in enumerate(self.events):
            pred = (dynamics.A[w - 1] @ self.states[k]
                    + dynamics.B[w - 1] @ self.inputs[k])
            err = max(err, float(np.abs(pred - self.states[k + 1]).max()))
        return err


def run_mpc(config: BenchConfig, out_dir=None):
    """Closed-loop MPC: solve, apply the root input, advance on a sampled
    event, warm-start the next solve from the previous primal-dual pair.

    Returns {solver: [MpcTrace, ...]} over ``config.realizations``
    realizations (seeded); one CSV is written per trace."""
    from pathlib import Path

    out = Path(out_dir or config.out_dir)
    p0 = config.build_problem()
    prepared = _cp.prepare(p0)
    alpha = _sp.default_alpha(p0)
    probs = np.asarray(config.branch_probs, dtype=np.float64)

    results = {}
    for solver in config.selected_solvers():
        traces = []
        for real in range(config.realizations):
            rng = np.random.default_rng(config.seed + real)
            p = p0
            warm = None
            trace = MpcTrace(solver, real, [], [p0.x0.copy()], [], [], [], [],
                             [], [])
            for step in range(config.mpc_steps):
                t0 = time.perf_counter()
                z, eta, report = _solve(config, solver, p, prepared,
                                        warm_start=warm, alpha=alpha)
                wall = 1000.0 * (time.perf_counter() - t0)
                u0 = z.u[0].copy()
                w = int(rng.choice(probs.size, p=probs)) + 1
                x_next = p.dynamics.A[w - 1] @ p.x0 + p.dynamics.B[w - 1] @ u0

                trace.events.append(w)
                trace.inputs.append(u0)
                trace.states.append(x_next.copy())
                trace.iters.append(report.iterations)
                trace.l_calls.append(report.l_calls)
                trace.wall_ms.append(wall)
                trace.warm.append(warm is not None)
                trace.statuses.append(report.status)

                p = p.with_initial_state(x_next)
                _sp.share_plan(p0, p)
                if config.warm_start:
                    warm = (z.data.copy(), eta.data.copy())
            traces.append(trace)
            _write_csv(out / f"mpc_{solver}_r{real}.csv",
                       ("step", "event", "iters", "l_calls", "wall_ms",
                        "warm", "x_norm", "u_norm"),
                       trace.rows())
        results[solver] = traces
    return results


def run_bench_kernels(config: BenchConfig, reps: int = 50, out_dir=None):
    """Time the hot kernels on every available backend; returns the rows."""
    from pathlib import Path

    out = Path(out_dir or config.out_dir)
    p = config.build_problem()
    prepared = _cp.prepare(p)
    plan, s2 = prepared.plan, prepared.s2
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(plan.zlay.dim)
    eta_buf = plan.elay.new()
    zout = plan.zlay.new()
    from .prox import S1Workspace

    work = S1Workspace(plan)
    rows = []
    for name, mod in sorted(_kernels.available().items()):
        plan.backend = mod

        def timed(label, fn):
            fn()  # warm-up
            t0 = time.perf_counter()
            for _ in range(reps):
                fn()
            dt = time.perf_counter() - t0
            rows.append((name, label, reps, f"{dt:.6f}",
                         f"{1e6 * dt / reps:.2f}"))

        timed("apply_L", lambda: mod.apply_L(plan, z, eta_buf))
        timed("apply_L_adjoint", lambda: mod.apply_L_adjoint(plan, eta_buf, zout))
        timed("project_s3", lambda: mod.project_s3(plan, eta_buf))
        timed("project_s2", lambda: mod.project_s2(s2, z.copy()))

        x = plan.zlay.x(z).copy()
        u = plan.zlay.u(z).copy()
        timed("s1_online", lambda: mod.s1_online(
            plan, prepared.dp, x.copy(), u.copy(), p.x0, work.q, work.d))
    plan.backend = _kernels.select()
    _write_csv(out / "bench_kernels.csv",
               ("backend", "op", "reps", "total_s", "per_call_us"), rows)
    return rows


# -- command line --------------------------------------------------------------

def _common_flags(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--solver", choices=SOLVERS)
    sub.add_argument("--horizon", type=int)
    sub.add_argument("--nx", type=int, dest="n_x")
    sub.add_argument("--d", type=int)
    sub.add_argument("--alpha-risk", type=float, dest="alpha_risk")
    sub.add_argument("--tol-abs", type=float, dest="eps_abs")
    sub.add_argument("--tol-rel", type=float, dest="eps_rel")
    sub.add_argument("--mpc-steps", type=int, dest="mpc_steps")
    sub.add_argument("--warm-start", action="store_true", dest="warm_start",
                     default=None)
    sub.add_argument("--no-warm-start", action="store_false", dest="warm_start",
                     default=None)
    sub.add_argument("--realizations", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out-dir", dest="out_dir")
    sub.add_argument("--time-budget-s", type=float, dest="time_budget_s")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="raocp",
        description="Risk-averse optimal control benchmarks on scenario trees")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("open-loop", help="solve one instance per solver")
    _common_flags(sub)

    sub = subs.add_parser("sweep", help="open-loop solves over horizons")
    _common_flags(sub)
    sub.add_argument("--horizons", default="3,6,9",
                     help="comma-separated ascending horizons")

    sub = subs.add_parser("mpc", help="closed-loop simulation with warm starts")
    _common_flags(sub)

    sub = subs.add_parser("bench-kernels",
                          help="compare kernel backends on the hot operators")
    _common_flags(sub)
    sub.add_argument("--reps", type=int, default=50)
    return parser


_MPC_BASE = BenchConfig(n_x=20, horizon=10, eps_abs=1e-3, eps_rel=1e-3,
                        solver="supermann")
# the horizon sweep runs at loose tolerance on wide problems, where a
# longer Anderson memory and a deeper line search pay off
_SWEEP_BASE = BenchConfig(n_x=50, eps_abs=1e-3, eps_rel=1e-3,
                          solver="supermann", aa_memory=15, sigma=0.9,
                          beta=0.7, lam=1.5)


def _config_from_args(args) -> BenchConfig:
    overrides = {k: getattr(args, k) for k in (
        "solver", "horizon", "n_x", "d", "alpha_risk", "eps_abs", "eps_rel",
        "mpc_steps", "warm_start", "realizations", "seed", "out_dir",
        "time_budget_s") if hasattr(args, k)}
    base = {"mpc": _MPC_BASE, "sweep": _SWEEP_BASE}.get(args.command)
    return load_config(args.config, overrides, base=base)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "open-loop":
            reports = run_open_loop(config)
            for solver, rep in reports.items():
                print(f"{solver}: {rep.status} iters={rep.iterations} "
                      f"l_calls={rep.l_calls} xi={rep.xi:.3e} "
                      f"wall={rep.wall_time_s:.2f}s")
        elif args.command == "sweep":
            horizons = [int(tok) for tok in args.horizons.split(",")]
            for row in run_horizon_sweep(config, horizons):
                print(",".join(str(v) for v in row))
        elif args.command == "mpc":
            results = run_mpc(config)
            for solver, traces in results.items():
                mean_iters = np.mean([np.mean(t.iters) for t in traces])
                print(f"{solver}: {len(traces)} realizations, "
                      f"mean iterations {mean_iters:.1f}, "
                      f"warm={config.warm_start}")
        elif args.command == "bench-kernels":
            rows = run_bench_kernels(config, reps=args.reps)
            print(f"{'backend':<10}{'op':<18}{'per_call_us':>12}")
            for backend, op, _, _, per_call in rows:
                print(f"{backend:<10}{op:<18}{per_call:>12}")
    except ValidationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and use the exit contract
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
