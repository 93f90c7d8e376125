"""Accelerated fixed-point loop: SuperMann globalization around T.

Each outer iteration evaluates the residual r = v - T(v) once, measures it
in the metric induced by the step-size preconditioner, and takes one of
three updates: a blind quasi-Newton step when the residual has dropped
enough (K0), the line-searched candidate itself when it shrinks the metric
residual (K1), or a safeguarded projection step that always moves toward
the fixed-point set (K2).  Directions come from the Anderson buffers.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import anderson as _aa
from . import splitting as _sp
from .cp import DEFAULT_MAX_ITERS, Ops, Prepared, SolveReport, _start_point, prepare
from .errors import NormEstimationError, ValidationError

M_NORM_GUARD = -1e-14


@dataclass
class SupermannParams:
    """Line-search and direction parameters of the accelerated loop.

    The defaults were calibrated on the benchmark family in this package
    (they differ per problem regime; the sweep harness ships its own set).
    """

    c0: float = 0.99
    c1: float = 0.99
    c2: float = 0.99
    beta: float = 0.5
    sigma: float = 0.3
    lam: float = 1.5
    max_backtracks: int = 40
    aa_memory: int = 10
    reset_aa_on_k2: bool = False
    direction_cap: float = 4.0   # ||d|| <= cap * ||r||; 0 disables
    rho_variant: str = "paper"   # "paper": 2*alpha factor; "classic": none

    def __post_init__(self):
        for name in ("c0", "c1", "c2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValidationError(f"{name} must be in [0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValidationError("beta must be in (0, 1)")
        if not 0.0 < self.sigma < 1.0:
            raise ValidationError("sigma must be in (0, 1)")
        if not 0.0 < self.lam < 2.0:
            raise ValidationError("lam must be in (0, 2)")
        if self.max_backtracks < 1:
            raise ValidationError("max_backtracks must be >= 1")
        if self.rho_variant not in ("paper", "classic"):
            raise ValidationError("rho_variant must be 'paper' or 'classic'")
        if self.direction_cap < 0:
            raise ValidationError("direction_cap must be nonnegative")
        if not 1 <= self.aa_memory <= 20:
            warnings.warn("Anderson memory outside [1, 20]", stacklevel=2)


def m_norm(alpha: float, r, Lr_parts) -> float:
    """Metric residual norm sqrt(r' M r) from precomputed operator images.

    ``r`` is the (r_z, r_eta) pair and ``Lr_parts`` the pair (L r_z, L* r_eta).
    The radicand is nonnegative whenever alpha ||L|| < 1; values below
    -1e-14 indicate an invalid step size and raise.
    """
    r_z, r_eta = r
    l_rz, ls_reta = Lr_parts
    rad = float(r_z @ (r_z - alpha * ls_reta) + r_eta @ (r_eta - alpha * l_rz))
    if rad < M_NORM_GUARD:
        raise ArithmeticError(
            f"metric radicand {rad:g} < {M_NORM_GUARD:g}: step size too large")
    return np.sqrt(max(rad, 0.0))


class _State:
    """Everything the loop needs at one point v: T(v), residual, metrics,
    and the operator images of both (for secant shadow columns)."""

    __slots__ = ("v", "tv", "r", "l_rz", "ls_reta", "omega", "xi",
                 "v_img", "c_img")

    def __init__(self, v, tv, r, l_rz, ls_reta, omega, xi, v_img, c_img):
        self.v = v
        self.tv = tv
        self.r = r
        self.l_rz = l_rz
        self.ls_reta = ls_reta
        self.omega = omega
        self.xi = xi
        self.v_img = v_img      # (L z_v, L* eta_v) concatenated
        self.c_img = c_img      # (L r_z, L* r_eta) concatenated


def _eval_state(ops: Ops, v) -> _State:
    """Evaluate T, the residual and its metrics at v (4 operator calls).

    T itself yields L* eta_v and w = L(2 z+ - z); one L(r_z) and one
    L*(eta+) then determine every metric, since L z_v = w + 2 L r_z.
    """
    nz = ops.nz
    z, eta = v[:nz], v[nz:]
    tz, teta, ls_eta_v, w = ops.T_parts(z, eta)
    tv = np.concatenate([tz, teta])
    r = v - tv
    r_z, r_eta = r[:nz], r[nz:]
    l_rz = ops.L(r_z)
    ls_reta = ls_eta_v - ops.L_adj(teta)
    alpha = ops.alpha
    xi_p = r_z / alpha - ls_reta
    xi_d = r_eta / alpha - l_rz
    xi = float(max(np.abs(xi_p).max(initial=0.0),
                   np.abs(xi_d).max(initial=0.0)))
    omega = m_norm(alpha, (r_z, r_eta), (l_rz, ls_reta))
    v_img = np.concatenate([w + 2.0 * l_rz, ls_eta_v])
    c_img = np.concatenate([l_rz, ls_reta])
    return _State(v, tv, r, l_rz, ls_reta, omega, xi, v_img, c_img)


def solve_supermann(p, alpha: float | None = None, params: SupermannParams | None = None,
                    eps_abs: float = 1e-5, eps_rel: float = 1e-5,
                    max_iters: int = DEFAULT_MAX_ITERS, warm_start=None,
                    prepared: Prepared | None = None,
                    paper_literal_prox: bool = False, collect_trace: bool = False):
    """Globalized accelerated solve sharing T and the termination rule with
    the plain loop.

    Returns (PrimalDualVector, ImageVector, SolveReport).  The report extras
    carry per-update-type counters and, with ``collect_trace``, one row
    (k, type, tau, omega, omega_tilde, xi, l_calls) per iteration.
    """
    if eps_abs <= 0 or eps_rel <= 0:
        raise ValidationError("tolerances must be positive")
    params = params or SupermannParams()
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
            zl, el = prepared.plan.zlay, prepared.plan.elay
            return (_sp.PrimalDualVector(zl), _sp.ImageVector(el), report)

    ops = Ops(p, prepared, alpha, paper_literal_prox)
    z0, eta0 = _start_point(ops, warm_start)
    nz = ops.nz

    state = _eval_state(ops, np.concatenate([z0, eta0]))
    zeta = state.omega
    omega_safe = zeta
    buffers = _aa.AaBuffers(params.aa_memory)

    xi0 = state.xi
    threshold = max(eps_abs, eps_rel * xi0)
    history = [(0, ops.l_calls, xi0)]
    counters = {"K0": 0, "K1": 0, "K2": 0, "fallback": 0, "backtracks": 0}
    trace = []
    status = "max-iters"
    k = 0

    if xi0 <= threshold:
        status = "converged"

    while status != "converged" and k < max_iters:
        d, d_img = _aa.direction_with_extra(buffers, state.r, state.c_img)
        if params.direction_cap:
            nd = np.linalg.norm(d)
            nr = params.direction_cap * np.linalg.norm(state.r)
            if nd > nr:
                # trust-region guard: blind steps stay commensurate with
                # the residual even when the mixing weights blow up
                d *= nr / nd
                d_img *= nr / nd
        old = state
        update = None
        tau = 0.0
        omega_tilde = np.nan

        if state.omega <= params.c0 * zeta:
            # K0: blind quasi-Newton step, no line search
            zeta = state.omega
            new_state = _eval_state(ops, state.v + d)
            update = "K0"
        else:
            # images of d come from the buffers' shadow columns, so the
            # metric products below need no operator applications
            md_z = d[:nz] - alpha * d_img[ops.neta:]
            md_eta = d[nz:] - alpha * d_img[:ops.neta]
            tau = 1.0
            new_state = None
            for _ in range(params.max_backtracks):
                cand = _eval_state(ops, state.v + tau * d)
                omega_tilde = cand.omega
                if cand.xi <= threshold:
                    # candidate already certifies termination; accept it
                    new_state = cand
                    update = "K1"
                    break
                if (state.omega <= omega_safe
                        and cand.omega <= params.c1 * state.omega):
                    # K1: educated step, candidate state carried over
                    omega_safe = cand.omega + params.c2 ** k
                    new_state = cand
                    update = "K1"
                    break
                inner = float(cand.r[:nz] @ md_z + cand.r[nz:] @ md_eta)
                rho = cand.omega ** 2 - (
                    2.0 * alpha * tau * inner if params.rho_variant == "paper"
                    else tau * inner)
                if rho >= params.sigma * cand.omega * state.omega:
                    # K2: safeguarded projection toward the fixed-point set
                    if cand.omega ** 2 <= 1e-300:
                        new_state = cand     # candidate is a fixed point
                    else:
                        step = (params.lam * rho / cand.omega ** 2) * cand.r
                        new_state = _eval_state(ops, state.v - step)
                    update = "K2"
                    break
                tau *= params.beta
                counters["backtracks"] += 1
            if new_state is None:
                # backtracking exhausted: plain averaged step keeps progress
                new_state = _eval_state(ops, state.tv)
                update = "fallback"

        counters[update] += 1
        if update in ("K2", "fallback") and params.reset_aa_on_k2:
            buffers.clear()
        else:
            buffers.push(new_state.v - old.v, new_state.r - old.r,
                         new_state.v_img - old.v_img,
                         new_state.c_img - old.c_img)
        if collect_trace:
            # decision inputs of iteration k: residual metrics at the point
            # the update was computed from
            trace.append((k, update, tau, old.omega, omega_tilde, old.xi,
                          ops.l_calls))
        state = new_state
        k += 1
        history.append((k, ops.l_calls, state.xi))
        if state.xi <= threshold:
            status = "converged"

    report = SolveReport(
        status=status,
        iterations=k,
        l_calls=ops.l_calls,
        l_calls_T=2 * ops.t_applications,
        l_calls_residual=ops.l_calls - 2 * ops.t_applications,
        xi=state.xi,
        wall_time_s=time.perf_counter() - t_start,
        history=history,
        extras={"counters": counters, "trace": trace,
                "rho_variant": params.rho_variant},
    )
    plan = prepared.plan
    return (_sp.PrimalDualVector(plan.zlay, state.tv[:nz].copy()),
            _sp.ImageVector(plan.elay, state.tv[nz:].copy()), report)
