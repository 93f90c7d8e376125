"""The primal-dual operator T, residual-based termination, and the plain loop.

One T application costs exactly one L and one L* call; computing the
termination quantities costs two more.  Every L/L* application is counted,
and the report breaks the total down into T applications and residual
checks so call budgets can be compared across solvers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import prox as _prox
from . import splitting as _sp
from .errors import NormEstimationError, ValidationError

DEFAULT_MAX_ITERS = 50_000


@dataclass
class SolveReport:
    status: str                 # converged | max-iters | not-converged-norm-estimate
    iterations: int
    l_calls: int
    l_calls_T: int
    l_calls_residual: int
    xi: float
    wall_time_s: float
    history: list               # (iteration, cumulative l_calls, xi) per check
    extras: dict = field(default_factory=dict)


class Prepared:
    """Per-instance caches shared by every solve (independent of x0)."""

    def __init__(self, p):
        self.plan = _sp.get_plan(p)
        self.dp = _prox.dp_offline(p)
        self.s2 = _prox.build_kernel_projectors(p)


def prepare(p) -> Prepared:
    return Prepared(p)


class Ops:
    """Flat-array oracle around one problem with L-call accounting."""

    def __init__(self, p, prepared: Prepared, alpha: float,
                 paper_literal_prox: bool = False):
        self.p = p
        self.prepared = prepared
        self.plan = prepared.plan
        self.alpha = float(alpha)
        self.paper_literal_prox = paper_literal_prox
        self.work = _prox.S1Workspace(self.plan)
        self._eta_scratch = self.plan.elay.new()
        self.l_calls = 0
        self.t_applications = 0

    @property
    def nz(self):
        return self.plan.zlay.dim

    @property
    def neta(self):
        return self.plan.elay.dim

    def L(self, z, out=None):
        self.l_calls += 1
        return self.plan.L(z, out)

    def L_adj(self, eta, out=None):
        self.l_calls += 1
        return self.plan.L_adj(eta, out)

    def T_parts(self, z, eta):
        """One operator application plus the images computed on the way.

        Returns (z+, eta+, L* eta, w) with w = L(2 z+ - z); both solvers
        derive every residual metric from these without further applications
        (L z at the input point, for instance, is w + 2 L r_z).
        """
        a = self.alpha
        ls_eta = self.L_adj(eta)
        znew = z - a * ls_eta
        _prox._prox_f_flat(self.plan, self.p.x0, self.prepared.dp,
                           self.prepared.s2, a, znew, self.work)
        w = self.L(2.0 * znew - z)
        enew = eta + a * w
        _prox._prox_g_conj_flat(self.plan, a, enew, self._eta_scratch,
                                self.paper_literal_prox)
        self.t_applications += 1
        return znew, enew, ls_eta, w

    def T(self, z, eta):
        """One operator application; returns new flat arrays (z+, eta+)."""
        znew, enew, _, _ = self.T_parts(z, eta)
        return znew, enew

    def residual_errors(self, r_z, r_eta):
        """Termination quantities from a residual pair.

        Returns (xi_p, xi_d, xi, L r_z, L* r_eta); the last two are reused
        by the accelerated solver's metric computations.
        """
        ls = self.L_adj(r_eta)
        lr = self.L(r_z)
        xi_p = r_z / self.alpha - ls
        xi_d = r_eta / self.alpha - lr
        xi = max(np.abs(xi_p).max(initial=0.0), np.abs(xi_d).max(initial=0.0))
        return xi_p, xi_d, float(xi), lr, ls


class CpWorkspace:
    """Iteration state: current point v, its image Tv, and the residual."""

    def __init__(self, ops: Ops, z, eta):
        self.ops = ops
        self.z, self.eta = z, eta
        self.Tz, self.Teta = ops.T(z, eta)
        self.r_z = self.z - self.Tz
        self.r_eta = self.eta - self.Teta
        self.xi_p = None
        self.xi_d = None
        self.xi = np.inf
        self.iterations = 0

    def advance(self):
        """Accept Tv as the new point and apply T once more."""
        self.z, self.eta = self.Tz, self.Teta
        self.Tz, self.Teta = self.ops.T(self.z, self.eta)
        self.r_z = self.z - self.Tz
        self.r_eta = self.eta - self.Teta
        self.iterations += 1

    def refresh_errors(self):
        self.xi_p, self.xi_d, self.xi, _, _ = self.ops.residual_errors(
            self.r_z, self.r_eta)
        return self.xi


def apply_T(p, prepared: Prepared | None, alpha: float,
            z: _sp.PrimalDualVector, eta: _sp.ImageVector):
    """One application of the primal-dual operator at (z, eta)."""
    prepared = prepared or prepare(p)
    ops = Ops(p, prepared, alpha)
    znew, enew = ops.T(z.data.copy(), eta.data.copy())
    return (_sp.PrimalDualVector(prepared.plan.zlay, znew),
            _sp.ImageVector(prepared.plan.elay, enew))


def residual_and_errors(workspace: CpWorkspace, alpha: float):
    """Residual r = v - Tv and the error pair certifying approximate optimality."""
    if abs(alpha - workspace.ops.alpha) > 0:
        raise ValidationError("alpha must match the workspace step size")
    xi = workspace.refresh_errors()
    return ((workspace.r_z.copy(), workspace.r_eta.copy()),
            workspace.xi_p, workspace.xi_d, xi)


def _start_point(ops, warm_start):
    if warm_start is None:
        return ops.plan.zlay.new(), ops.plan.elay.new()
    z0, eta0 = warm_start
    z0 = z0.data if isinstance(z0, _sp.PrimalDualVector) else z0
    eta0 = eta0.data if isinstance(eta0, _sp.ImageVector) else eta0
    return np.array(z0, dtype=np.float64), np.array(eta0, dtype=np.float64)


def solve_cp(p, alpha: float | None = None, eps_abs: float = 1e-5,
             eps_rel: float = 1e-5, max_iters: int = DEFAULT_MAX_ITERS,
             warm_start=None, prepared: Prepared | None = None,
             residual_stride: int = 1, paper_literal_prox: bool = False):
    """Plain fixed-point iteration of T with residual-based termination.

    Stops when xi <= max(eps_abs, eps_rel * xi_0).  Returns
    (PrimalDualVector, ImageVector, SolveReport); the report history has one
    (iteration, l_calls, xi) row per termination check.
    """
    if eps_abs <= 0 or eps_rel <= 0:
        raise ValidationError("tolerances must be positive")
    if residual_stride < 1:
        raise ValidationError("residual_stride must be >= 1")
    prepared = prepared or prepare(p)
    t_start = time.perf_counter()
    if alpha is None:
        try:
            alpha = _sp.default_alpha(p)
        except NormEstimationError:
            report = SolveReport(
                status="not-converged-norm-estimate", iterations=0, l_calls=0,
                l_calls_T=0, l_calls_residual=0, xi=float("inf"),
                wall_time_s=time.perf_counter() - t_start, history=[])
            z0, eta0 = _start_point(
                Ops(p, prepared, 1.0), warm_start)
            return (_sp.PrimalDualVector(prepared.plan.zlay, z0),
                    _sp.ImageVector(prepared.plan.elay, eta0), report)

    ops = Ops(p, prepared, alpha, paper_literal_prox)
    z, eta = _start_point(ops, warm_start)

    # Each loop pass runs one T application at 2 operator calls and checks
    # the previous iterate's residual errors exactly from cached images:
    # L* r_eta needs L* eta at the next point (this pass's first half) and
    # L r_z follows from the running L z image, refreshed periodically to
    # stop rounding drift in the recursion Lz+ = (w + Lz)/2.
    lz = ops.L(z)
    prev = None
    history = []
    threshold = None
    xi_last = float("inf")
    status = None
    while True:
        ls_eta = ops.L_adj(eta)
        if prev is not None:
            r_z, r_eta, lr_z, ls_prev, kk = prev
            if kk % residual_stride == 0 or kk + 1 >= max_iters:
                xi_p = r_z / alpha - (ls_prev - ls_eta)
                xi_d = r_eta / alpha - lr_z
                xi_last = float(max(np.abs(xi_p).max(), np.abs(xi_d).max()))
                history.append((kk, ops.l_calls, xi_last))
                if threshold is None:
                    threshold = max(eps_abs, eps_rel * xi_last)
                if xi_last <= threshold:
                    status = "converged"
                    break
            if kk + 1 >= max_iters:
                status = "max-iters"
                break
        znew = z - alpha * ls_eta
        _prox._prox_f_flat(ops.plan, p.x0, prepared.dp, prepared.s2, alpha,
                           znew, ops.work)
        w = ops.L(2.0 * znew - z)
        enew = eta + alpha * w
        _prox._prox_g_conj_flat(ops.plan, alpha, enew, ops._eta_scratch,
                                paper_literal_prox)
        ops.t_applications += 1
        lznew = (ops.L(znew) if ops.t_applications % 512 == 0
                 else 0.5 * (w + lz))
        prev = (z - znew, eta - enew, lz - lznew, ls_eta,
                0 if prev is None else prev[4] + 1)
        z, eta, lz = znew, enew, lznew

    report = SolveReport(
        status=status,
        iterations=history[-1][0] if history else 0,
        l_calls=ops.l_calls,
        l_calls_T=2 * ops.t_applications,
        l_calls_residual=ops.l_calls - 2 * ops.t_applications,
        xi=xi_last,
        wall_time_s=time.perf_counter() - t_start,
        history=history,
    )
    return (_sp.PrimalDualVector(prepared.plan.zlay, z),
            _sp.ImageVector(prepared.plan.elay, eta), report)
