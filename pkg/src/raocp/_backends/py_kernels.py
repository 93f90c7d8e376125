"""Vectorized numpy implementation of the hot per-node kernels.

Each function mirrors a signature in the compiled backend; the plan supplies
packed data, unique-value groupings and scatter/gather index arrays so every
loop below runs over unique matrices or tree stages, never over nodes.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _soc_rows(V):
    """Project each row of V onto the second-order cone (radius last)."""
    w = V[:, :-1]
    t = V[:, -1]
    nw = np.sqrt(np.einsum("ij,ij->i", w, w))
    inside = nw <= t
    polar = (nw <= -t) & ~inside
    mid = ~(inside | polar)
    V[polar] = 0.0
    if np.any(mid):
        c = 0.5 * (nw[mid] + t[mid])
        V[mid, :-1] = w[mid] * (c / nw[mid])[:, None]
        V[mid, -1] = c


def apply_L(plan, z, out):
    zl, el = plan.zlay, plan.elay
    nn, nx, nu = plan.num_nodes, plan.n_x, plan.n_u
    nnl = plan.n_nonleaf
    x = z[zl.x0:zl.u0].reshape(nn, nx)
    u = z[zl.u0:zl.y0].reshape(nnl, nu)
    yf = z[zl.y0:zl.t0]
    tau = z[zl.t0:zl.s0_]
    s = z[zl.s0_:]

    # nonleaf blocks: y passthrough, epigraph scalar, constraint image
    out[plan.ay_idx] = yf
    dots = np.add.reduceat(plan.b_flat * yf, plan.y_off[:-1])
    out[plan.e_idx] = z[plan.s_src] - dots
    C = np.empty((nnl, plan.n_c))
    xn = x[:nnl]
    for k, rows in enumerate(plan.G_groups):
        if rows.size:
            C[rows] = xn[rows] @ plan.Gx_stack[k].T + u[rows] @ plan.Gu_stack[k].T
    out[plan.c_idx2d] = C

    # per-node blocks: weighted ancestor state/input, tau epigraph pair
    Bb = out[el.b0:el.c0].reshape(nn - 1, el.sb)
    xa = x[plan.anc[1:]]
    ua = u[plan.anc[1:]]
    for k, rows in enumerate(plan.sqQ_groups):
        if rows.size:
            Bb[rows, :nx] = xa[rows] @ plan.sqQ_stack[k].T
            Bb[rows, nx:nx + nu] = ua[rows] @ plan.sqR_stack[k].T
    Bb[:, -2] = 0.5 * tau
    Bb[:, -1] = 0.5 * tau

    # leaf blocks: terminal constraint image, weighted state, s epigraph pair
    Cb = out[el.c0:].reshape(plan.n_leaf, el.sc)
    xl = x[nnl:]
    sl = s[nnl - 1:]
    for k, rows in enumerate(plan.GN_groups):
        if rows.size:
            Cb[rows, :plan.n_cn] = xl[rows] @ plan.GN_stack[k].T
    for k, rows in enumerate(plan.sqQN_groups):
        if rows.size:
            Cb[rows, plan.n_cn:plan.n_cn + nx] = xl[rows] @ plan.sqQN_stack[k].T
    Cb[:, -2] = 0.5 * sl
    Cb[:, -1] = 0.5 * sl


def apply_L_adjoint(plan, eta, out):
    zl, el = plan.zlay, plan.elay
    nn, nx, nu = plan.num_nodes, plan.n_x, plan.n_u
    nnl = plan.n_nonleaf
    out[:] = 0.0
    x = out[zl.x0:zl.u0].reshape(nn, nx)
    u = out[zl.u0:zl.y0].reshape(nnl, nu)

    # nonleaf blocks
    ev = eta[plan.e_idx]
    out[zl.y0:zl.t0] = eta[plan.ay_idx] - plan.b_flat * np.repeat(ev, plan.y_dims)
    out[plan.s_src] += ev
    C = eta[plan.c_idx2d]
    for k, rows in enumerate(plan.G_groups):
        if rows.size:
            x[rows] += C[rows] @ plan.Gx_stack[k]
            u[rows] += C[rows] @ plan.Gu_stack[k]

    # per-node blocks scatter into the ancestor's state/input slots; the
    # children of consecutive parents are consecutive, so per-parent sums
    # are contiguous segment reductions.
    Bb = eta[el.b0:el.c0].reshape(nn - 1, el.sb)
    cx = np.empty((nn - 1, nx))
    cu = np.empty((nn - 1, nu))
    for k, rows in enumerate(plan.sqQ_groups):
        if rows.size:
            cx[rows] = Bb[rows, :nx] @ plan.sqQ_stack[k]
            cu[rows] = Bb[rows, nx:nx + nu] @ plan.sqR_stack[k]
    seg = plan.child_start[:nnl] - 1
    x[:nnl] += np.add.reduceat(cx, seg, axis=0)
    u += np.add.reduceat(cu, seg, axis=0)
    out[zl.t0:zl.s0_] = 0.5 * (Bb[:, -2] + Bb[:, -1])

    # leaf blocks
    Cb = eta[el.c0:].reshape(plan.n_leaf, el.sc)
    xl = x[nnl:]
    for k, rows in enumerate(plan.GN_groups):
        if rows.size:
            xl[rows] += Cb[rows, :plan.n_cn] @ plan.GN_stack[k]
    for k, rows in enumerate(plan.sqQN_groups):
        if rows.size:
            xl[rows] += Cb[rows, plan.n_cn:plan.n_cn + nx] @ plan.sqQN_stack[k]
    out[zl.s0_ + nnl - 1:] += 0.5 * (Cb[:, -2] + Cb[:, -1])


def project_s3(plan, eta):
    """In-place projection of an image vector onto the constraint product set."""
    el = plan.elay
    nn, nx, nu = plan.num_nodes, plan.n_x, plan.n_u

    # nonleaf y parts onto the dual risk cone, blockwise per unique cone
    for k, rows in enumerate(plan.cone_groups):
        if not rows.size:
            continue
        Y = eta[plan.cone_y_idx[k]]
        pos = 0
        for b in range(plan.cone_off[k], plan.cone_off[k + 1]):
            kind, sz = plan.cone_kinds[b], plan.cone_sizes[b]
            seg = Y[:, pos:pos + sz]
            if kind == 0:
                np.maximum(seg, 0.0, out=seg)
            elif kind == 2:
                seg[:] = 0.0
            elif kind == 3:
                _soc_rows(seg)
            pos += sz
        eta[plan.cone_y_idx[k]] = Y

    # epigraph scalars onto the nonnegative half-line
    eta[plan.e_idx] = np.maximum(eta[plan.e_idx], 0.0)

    # constraint images onto their boxes
    C = eta[plan.c_idx2d]
    for k, rows in enumerate(plan.con_groups):
        if rows.size:
            C[rows] = np.clip(C[rows], plan.clo_stack[k], plan.chi_stack[k])
    eta[plan.c_idx2d] = C

    # per-node blocks onto the translated second-order cone
    Bb = eta[el.b0:el.c0].reshape(nn - 1, el.sb)
    Bb[:, -2] -= 0.5
    Bb[:, -1] += 0.5
    _soc_rows(Bb)
    Bb[:, -2] += 0.5
    Bb[:, -1] -= 0.5

    # leaf blocks: terminal box then translated second-order cone
    Cb = eta[el.c0:].reshape(plan.n_leaf, el.sc)
    for k, rows in enumerate(plan.tcon_groups):
        if rows.size:
            Cb[rows, :plan.n_cn] = np.clip(
                Cb[rows, :plan.n_cn], plan.tlo_stack[k], plan.thi_stack[k])
    S = Cb[:, plan.n_cn:]
    S[:, -2] -= 0.5
    S[:, -1] += 0.5
    _soc_rows(S)
    S[:, -2] += 0.5
    S[:, -1] -= 0.5


def project_s2(proj, z):
    """In-place projection of the (y, tau, s) groups onto the coupling kernels."""
    for idx, Q in zip(proj.group_idx2d, proj.basis):
        if not idx.size:
            continue
        G = z[idx]
        G -= (G @ Q) @ Q.T
        z[idx] = G


def s1_online(plan, dp, x, u, x0, q, d):
    """In-place projection of (x, u) onto the dynamics subspace.

    ``x`` (num_nodes, n_x) and ``u`` (n_nonleaf, n_u) hold the point to
    project on entry and the projection on exit; ``q``/``d`` are scratch
    arrays of the same shapes.
    """
    sp = plan.stage_ptr
    nnl = plan.n_nonleaf

    # backward sweep: accumulate the linear value-function terms
    np.negative(x[nnl:], out=q[nnl:])
    for t in range(plan.horizon - 1, -1, -1):
        ps, pe = int(sp[t]), int(sp[t + 1])
        cs, ce = int(sp[t + 1]), int(sp[t + 2])
        nc = ce - cs
        btq = np.empty((nc, plan.n_u))
        aq = np.empty((nc, plan.n_x))
        for k, rows in enumerate(plan.stage_dyn_groups[t]):
            if rows.size:
                btq[rows - cs] = q[rows] @ plan.B_stack[k]
        np.matmul(q[cs:ce, None, :], dp.Abar[cs:ce], out=aq[:, None, :])
        seg = plan.child_start[ps:pe] - cs
        sum_btq = np.add.reduceat(btq, seg, axis=0)
        sum_aq = np.add.reduceat(aq, seg, axis=0)
        rhs = u[ps:pe] - sum_btq
        np.matmul(dp.Rt_inv[ps:pe], rhs[:, :, None], out=d[ps:pe, :, None])
        q[ps:pe] = (
            np.matmul((d[ps:pe] - u[ps:pe])[:, None, :], dp.K[ps:pe])[:, 0, :]
            - x[ps:pe]
            + np.matmul(dp.M1[ps:pe], d[ps:pe, :, None])[:, :, 0]
            + sum_aq
        )

    # forward rollout from the true initial state
    x[0] = x0
    for t in range(plan.horizon):
        ps, pe = int(sp[t]), int(sp[t + 1])
        cs, ce = int(sp[t + 1]), int(sp[t + 2])
        u[ps:pe] = np.matmul(dp.K[ps:pe], x[ps:pe, :, None])[:, :, 0] + d[ps:pe]
        xa = x[plan.anc[cs:ce]]
        ua = u[plan.anc[cs:ce]]
        for k, rows in enumerate(plan.stage_dyn_groups[t]):
            if rows.size:
                loc = rows - cs
                x[rows] = xa[loc] @ plan.A_stack[k].T + ua[loc] @ plan.B_stack[k].T
