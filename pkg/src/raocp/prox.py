"""Proximal oracles of the splitting.

prox of f decomposes into a shift of the epigraph scalar s0, a dynamic
programming projection of (x, u) onto the dynamics subspace, and per-node
kernel projections coupling each risk dual to its children's slack pairs.
prox of g* goes through the projection onto the constraint product set via
the extended Moreau decomposition.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import splitting as _sp
from .errors import ValidationError
from .risk import project_soc  # re-exported: radius-last SOC projection

__all__ = [
    "DpCache", "dp_offline", "project_s1",
    "KernelProjectors", "build_kernel_projectors", "project_s2",
    "project_soc", "project_s3", "prox_f", "prox_g_conj", "S1Workspace",
]


class DpCache:
    """Offline factorizations for the dynamics projection.

    Per nonleaf node: feedback gain K, the Cholesky factor (lower) of the
    input-space Gram matrix Rt = I + sum B'PB, its inverse, and the
    precomputed sum of Abar' P B over the children.  Per node >= 1: the
    closed-loop matrix Abar.  Per node: the value-function Hessian P
    (identity at the leaves).
    """

    def __init__(self, P, K, Rt_chol, Rt_inv, Abar, M1):
        self.P = P
        self.K = K
        self.Rt_chol = Rt_chol
        self.Rt_inv = Rt_inv
        self.Abar = Abar
        self.M1 = M1


class S1Workspace:
    """Scratch arrays reused across dynamics projections (one per solve)."""

    def __init__(self, plan):
        self.q = np.empty((plan.num_nodes, plan.n_x))
        self.d = np.empty((plan.n_nonleaf, plan.n_u))


def dp_offline(p) -> DpCache:
    """Backward factorization sweep preparing the dynamics projection.

    Starts from P = I at the leaves and, stage by stage, forms
    Rt = I + sum B'PB (Cholesky-factorized), K = -Rt^{-1} sum B'PA,
    Abar = A + BK and P = I + K'K + sum Abar'P Abar.
    """
    plan = _sp.get_plan(p)
    nn, nx, nu = plan.num_nodes, plan.n_x, plan.n_u
    nnl = plan.n_nonleaf
    sp = plan.stage_ptr
    eye_x = np.eye(nx)
    eye_u = np.eye(nu)

    P = np.empty((nn, nx, nx))
    K = np.empty((nnl, nu, nx))
    Rt_chol = np.empty((nnl, nu, nu))
    Rt_inv = np.empty((nnl, nu, nu))
    Abar = np.zeros((nn, nx, nx))
    M1 = np.empty((nnl, nx, nu))

    P[nnl:] = eye_x
    for t in range(plan.horizon - 1, -1, -1):
        ps, pe = int(sp[t]), int(sp[t + 1])
        cs, ce = int(sp[t + 1]), int(sp[t + 2])
        A_ch = plan.A_stack[plan.A_id[cs:ce]]
        B_ch = plan.B_stack[plan.B_id[cs:ce]]
        Bt = B_ch.transpose(0, 2, 1)
        PB = P[cs:ce] @ B_ch
        seg = plan.child_start[ps:pe] - cs

        Rt = eye_u + np.add.reduceat(Bt @ PB, seg, axis=0)
        Rt_chol[ps:pe] = np.linalg.cholesky(Rt)
        for i in range(ps, pe):
            Rt_inv[i] = scipy.linalg.cho_solve(
                (Rt_chol[i], True), eye_u, check_finite=False)

        BtPA = Bt @ (P[cs:ce] @ A_ch)
        K[ps:pe] = -Rt_inv[ps:pe] @ np.add.reduceat(BtPA, seg, axis=0)

        Abar[cs:ce] = A_ch + B_ch @ K[plan.anc[cs:ce]]
        At = Abar[cs:ce].transpose(0, 2, 1)
        M1[ps:pe] = np.add.reduceat(At @ PB, seg, axis=0)
        Pnew = (eye_x
                + K[ps:pe].transpose(0, 2, 1) @ K[ps:pe]
                + np.add.reduceat(At @ P[cs:ce] @ Abar[cs:ce], seg, axis=0))
        P[ps:pe] = 0.5 * (Pnew + Pnew.transpose(0, 2, 1))

    # P >= I by construction; a failed factorization signals corrupt data
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("value-function matrices lost definiteness") from exc

    return DpCache(P, K, Rt_chol, Rt_inv, Abar, M1)


def project_s1(p, cache: DpCache, x, u, work: S1Workspace | None = None):
    """Projection of per-node states/inputs onto the dynamics-feasible subspace.

    Returns new arrays (x', u') satisfying x'_0 = p.x0 and the node dynamics
    exactly; a backward sweep accumulates the linear value-function terms and
    a forward rollout rebuilds the trajectory.
    """
    plan = _sp.get_plan(p)
    x = np.array(x, dtype=np.float64).reshape(plan.num_nodes, plan.n_x)
    u = np.array(u, dtype=np.float64).reshape(plan.n_nonleaf, plan.n_u)
    if work is None:
        work = S1Workspace(plan)
    plan.backend.s1_online(plan, cache, x, u, p.x0, work.q, work.d)
    return x, u


class KernelProjectors:
    """Per-node projections onto ker [E' -I -I; F' 0 0].

    One orthonormal basis of the row space is kept per unique risk object
    (SVD-based, so rank deficiency yields a minimum-norm-consistent basis);
    the groups gather (y_i, tau of children, s of children) straight from a
    flat primal vector.
    """

    def __init__(self, basis, group_idx2d, uid, g_idx, g_off, backend):
        self.basis = basis
        self.group_idx2d = group_idx2d
        self.uid = uid
        self.g_idx = g_idx
        self.g_off = g_off
        self.backend = backend
        # packed form for the compiled backend
        self.bas_dim = np.array([Q.shape[0] for Q in basis], dtype=np.int64)
        self.bas_rank = np.array([Q.shape[1] for Q in basis], dtype=np.int64)
        sizes = self.bas_dim * self.bas_rank
        self.bas_off = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        self.bas_flat = (np.concatenate([Q.ravel() for Q in basis])
                         if basis else np.zeros(0))


def build_kernel_projectors(p) -> KernelProjectors:
    plan = _sp.get_plan(p)
    zl = plan.zlay
    uniq = {}
    uid = np.empty(plan.n_nonleaf, dtype=np.int64)
    reps = []
    for i in range(plan.n_nonleaf):
        rep = p.risks[i]
        if id(rep) not in uniq:
            uniq[id(rep)] = len(reps)
            reps.append(rep)
        uid[i] = uniq[id(rep)]

    basis = []
    for rep in reps:
        n, m = rep.n, rep.cone.dim
        top = np.hstack([rep.E.T, -np.eye(n), -np.eye(n)])
        if rep.n_nu:
            bot = np.hstack([rep.F.T, np.zeros((rep.n_nu, 2 * n))])
            M = np.vstack([top, bot])
        else:
            M = top
        basis.append(np.ascontiguousarray(scipy.linalg.orth(M.T)))

    idx_per_node = []
    for i in range(plan.n_nonleaf):
        cs, cnt = plan.child_start[i], plan.child_count[i]
        idx_per_node.append(np.concatenate([
            np.arange(zl.y0 + zl.y_off[i], zl.y0 + zl.y_off[i + 1]),
            np.arange(zl.t0 + cs - 1, zl.t0 + cs - 1 + cnt),
            np.arange(zl.s0_ + cs - 1, zl.s0_ + cs - 1 + cnt),
        ]))
    g_idx = np.concatenate(idx_per_node).astype(np.int64)
    g_off = np.concatenate(
        ([0], np.cumsum([ix.size for ix in idx_per_node]))).astype(np.int64)

    group_idx2d = []
    for k in range(len(reps)):
        rows = np.nonzero(uid == k)[0]
        group_idx2d.append(np.stack([idx_per_node[i] for i in rows])
                           if rows.size else np.zeros((0, 0), np.int64))

    return KernelProjectors(basis, group_idx2d, uid, g_idx, g_off,
                            plan.backend)


def project_s2(projectors: KernelProjectors, z: _sp.PrimalDualVector):
    """Copy of z with its (y, tau, s) groups projected onto the kernels."""
    out = z.copy()
    projectors.backend.project_s2(projectors, out.data)
    return out


def project_s3(p, eta: _sp.ImageVector) -> _sp.ImageVector:
    """Blockwise projection of an image vector onto the constraint sets.

    Nonleaf blocks go onto dual risk cone x half-line x constraint box; the
    per-node and leaf quadratic blocks go onto translated second-order cones
    whose offset (0, 1/2, -1/2) realizes the epigraph of the squared norm.
    """
    plan = _sp.get_plan(p)
    out = eta.copy()
    plan.backend.project_s3(plan, out.data)
    return out


def prox_f(p, cache: DpCache, projectors: KernelProjectors, alpha: float,
           z: _sp.PrimalDualVector) -> _sp.PrimalDualVector:
    """prox of alpha*f: shift s0 by -alpha, project (x,u) and (y,tau,s)."""
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    plan = _sp.get_plan(p)
    out = z.copy()
    _prox_f_flat(plan, p.x0, cache, projectors, alpha, out.data,
                 S1Workspace(plan))
    return out


def _prox_f_flat(plan, x0, cache, projectors, alpha, z_flat, work):
    """In-place prox of alpha*f on a flat primal array (solver hot path)."""
    z_flat[0] -= alpha
    zl = plan.zlay
    x = z_flat[zl.x0:zl.u0].reshape(plan.num_nodes, plan.n_x)
    u = z_flat[zl.u0:zl.y0].reshape(plan.n_nonleaf, plan.n_u)
    plan.backend.s1_online(plan, cache, x, u, x0, work.q, work.d)
    plan.backend.project_s2(projectors, z_flat)


def prox_g_conj(p, alpha: float, eta: _sp.ImageVector,
                paper_literal_prox: bool = False) -> _sp.ImageVector:
    """prox of alpha*g* via the extended Moreau decomposition.

    Returns eta - alpha * proj(eta / alpha).  With ``paper_literal_prox``
    the leading alpha is dropped (the two coincide at alpha = 1); the
    default form is the one that satisfies the Moreau identity for every
    alpha.
    """
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    plan = _sp.get_plan(p)
    out = eta.copy()
    _prox_g_conj_flat(plan, alpha, out.data, plan.elay.new(),
                      paper_literal_prox)
    return out


def _prox_g_conj_flat(plan, alpha, eta_flat, scratch, paper_literal_prox=False):
    """In-place prox of alpha*g* on a flat image array (solver hot path)."""
    np.divide(eta_flat, alpha, out=scratch)
    plan.backend.project_s3(plan, scratch)
    if paper_literal_prox:
        eta_flat -= scratch
    else:
        eta_flat -= alpha * scratch
