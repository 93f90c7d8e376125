# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled per-node kernels; mirrors py_kernels function for function.

Plain C loops over the plan's packed arrays.  Matrices with few unique
values are indexed through the per-node id arrays, so memory stays flat no
matter how large the tree grows.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

NAME = "cython"

ctypedef cnp.int64_t idx_t


cdef inline void _soc_inplace(double[::1] v, Py_ssize_t off, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t j
    cdef double nw2 = 0.0, nw, t, c, s
    for j in range(d - 1):
        nw2 += v[off + j] * v[off + j]
    nw = sqrt(nw2)
    t = v[off + d - 1]
    if nw <= t:
        return
    if nw <= -t:
        for j in range(d):
            v[off + j] = 0.0
        return
    c = 0.5 * (nw + t)
    s = c / nw
    for j in range(d - 1):
        v[off + j] *= s
    v[off + d - 1] = c


def apply_L(plan, const double[::1] z, double[::1] out):
    cdef:
        Py_ssize_t nn = plan.num_nodes
        Py_ssize_t nnl = plan.n_nonleaf
        Py_ssize_t nx = plan.n_x
        Py_ssize_t nu = plan.n_u
        Py_ssize_t n_c = plan.n_c
        Py_ssize_t n_cn = plan.n_cn
        Py_ssize_t x0 = plan.zlay.x0
        Py_ssize_t u0 = plan.zlay.u0
        Py_ssize_t y0 = plan.zlay.y0
        Py_ssize_t t0 = plan.zlay.t0
        Py_ssize_t s0 = plan.zlay.s0_
        Py_ssize_t b0 = plan.elay.b0
        Py_ssize_t c0 = plan.elay.c0
        Py_ssize_t sb = plan.elay.sb
        Py_ssize_t sc = plan.elay.sc
        const idx_t[::1] anc = plan.anc
        const idx_t[::1] y_dims = plan.y_dims
        const idx_t[::1] y_off = plan.y_off
        const idx_t[::1] a_off = plan.elay.a_off
        const idx_t[::1] s_src = plan.s_src
        const idx_t[::1] G_id = plan.G_id
        const idx_t[::1] GN_id = plan.GN_id
        const idx_t[::1] sqQ_id = plan.sqQ_id
        const idx_t[::1] sqR_id = plan.sqR_id
        const idx_t[::1] sqQN_id = plan.sqQN_id
        const double[::1] b_flat = plan.b_flat
        const double[:, :, ::1] Gx = plan.Gx_stack
        const double[:, :, ::1] Gu = plan.Gu_stack
        const double[:, :, ::1] GN = plan.GN_stack
        const double[:, :, ::1] sqQ = plan.sqQ_stack
        const double[:, :, ::1] sqR = plan.sqR_stack
        const double[:, :, ::1] sqQN = plan.sqQN_stack
        Py_ssize_t i, j, rr, m, abase, ybase, cbase, base, xoff, uoff, a, g, l
        double dot, acc, tau, sv

    with nogil:
        for i in range(nnl):
            m = y_dims[i]
            abase = a_off[i]
            ybase = y0 + y_off[i]
            dot = 0.0
            for j in range(m):
                out[abase + j] = z[ybase + j]
                dot += b_flat[y_off[i] + j] * z[ybase + j]
            out[abase + m] = z[s_src[i]] - dot
            g = G_id[i]
            xoff = x0 + i * nx
            uoff = u0 + i * nu
            cbase = abase + m + 1
            for rr in range(n_c):
                acc = 0.0
                for j in range(nx):
                    acc += Gx[g, rr, j] * z[xoff + j]
                for j in range(nu):
                    acc += Gu[g, rr, j] * z[uoff + j]
                out[cbase + rr] = acc

        for i in range(1, nn):
            a = anc[i]
            base = b0 + (i - 1) * sb
            g = sqQ_id[i]
            xoff = x0 + a * nx
            uoff = u0 + a * nu
            for rr in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc += sqQ[g, rr, j] * z[xoff + j]
                out[base + rr] = acc
            g = sqR_id[i]
            for rr in range(nu):
                acc = 0.0
                for j in range(nu):
                    acc += sqR[g, rr, j] * z[uoff + j]
                out[base + nx + rr] = acc
            tau = 0.5 * z[t0 + i - 1]
            out[base + sb - 2] = tau
            out[base + sb - 1] = tau

        for l in range(nn - nnl):
            i = nnl + l
            base = c0 + l * sc
            xoff = x0 + i * nx
            g = GN_id[l]
            for rr in range(n_cn):
                acc = 0.0
                for j in range(nx):
                    acc += GN[g, rr, j] * z[xoff + j]
                out[base + rr] = acc
            g = sqQN_id[l]
            for rr in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc += sqQN[g, rr, j] * z[xoff + j]
                out[base + n_cn + rr] = acc
            sv = 0.5 * z[s0 + i - 1]
            out[base + sc - 2] = sv
            out[base + sc - 1] = sv


def apply_L_adjoint(plan, const double[::1] eta, double[::1] out):
    cdef:
        Py_ssize_t nn = plan.num_nodes
        Py_ssize_t nnl = plan.n_nonleaf
        Py_ssize_t nx = plan.n_x
        Py_ssize_t nu = plan.n_u
        Py_ssize_t n_c = plan.n_c
        Py_ssize_t n_cn = plan.n_cn
        Py_ssize_t x0 = plan.zlay.x0
        Py_ssize_t u0 = plan.zlay.u0
        Py_ssize_t y0 = plan.zlay.y0
        Py_ssize_t t0 = plan.zlay.t0
        Py_ssize_t s0 = plan.zlay.s0_
        Py_ssize_t b0 = plan.elay.b0
        Py_ssize_t c0 = plan.elay.c0
        Py_ssize_t sb = plan.elay.sb
        Py_ssize_t sc = plan.elay.sc
        const idx_t[::1] anc = plan.anc
        const idx_t[::1] y_dims = plan.y_dims
        const idx_t[::1] y_off = plan.y_off
        const idx_t[::1] a_off = plan.elay.a_off
        const idx_t[::1] s_src = plan.s_src
        const idx_t[::1] G_id = plan.G_id
        const idx_t[::1] GN_id = plan.GN_id
        const idx_t[::1] sqQ_id = plan.sqQ_id
        const idx_t[::1] sqR_id = plan.sqR_id
        const idx_t[::1] sqQN_id = plan.sqQN_id
        const double[::1] b_flat = plan.b_flat
        const double[:, :, ::1] Gx = plan.Gx_stack
        const double[:, :, ::1] Gu = plan.Gu_stack
        const double[:, :, ::1] GN = plan.GN_stack
        const double[:, :, ::1] sqQ = plan.sqQ_stack
        const double[:, :, ::1] sqR = plan.sqR_stack
        const double[:, :, ::1] sqQN = plan.sqQN_stack
        Py_ssize_t i, j, rr, m, abase, ybase, cbase, base, xoff, uoff, a, g, l
        double ev, acc

    out[:] = 0.0
    with nogil:
        for i in range(nnl):
            m = y_dims[i]
            abase = a_off[i]
            ybase = y0 + y_off[i]
            ev = eta[abase + m]
            for j in range(m):
                out[ybase + j] = eta[abase + j] - b_flat[y_off[i] + j] * ev
            out[s_src[i]] += ev
            g = G_id[i]
            xoff = x0 + i * nx
            uoff = u0 + i * nu
            cbase = abase + m + 1
            for rr in range(n_c):
                acc = eta[cbase + rr]
                for j in range(nx):
                    out[xoff + j] += Gx[g, rr, j] * acc
                for j in range(nu):
                    out[uoff + j] += Gu[g, rr, j] * acc

        for i in range(1, nn):
            a = anc[i]
            base = b0 + (i - 1) * sb
            g = sqQ_id[i]
            xoff = x0 + a * nx
            uoff = u0 + a * nu
            for rr in range(nx):
                acc = eta[base + rr]
                for j in range(nx):
                    out[xoff + j] += sqQ[g, rr, j] * acc
            g = sqR_id[i]
            for rr in range(nu):
                acc = eta[base + nx + rr]
                for j in range(nu):
                    out[uoff + j] += sqR[g, rr, j] * acc
            out[t0 + i - 1] = 0.5 * (eta[base + sb - 2] + eta[base + sb - 1])

        for l in range(nn - nnl):
            i = nnl + l
            base = c0 + l * sc
            xoff = x0 + i * nx
            g = GN_id[l]
            for rr in range(n_cn):
                acc = eta[base + rr]
                for j in range(nx):
                    out[xoff + j] += GN[g, rr, j] * acc
            g = sqQN_id[l]
            for rr in range(nx):
                acc = eta[base + n_cn + rr]
                for j in range(nx):
                    out[xoff + j] += sqQN[g, rr, j] * acc
            out[s0 + i - 1] += 0.5 * (eta[base + sc - 2] + eta[base + sc - 1])


def project_s3(plan, double[::1] eta):
    cdef:
        Py_ssize_t nn = plan.num_nodes
        Py_ssize_t nnl = plan.n_nonleaf
        Py_ssize_t n_c = plan.n_c
        Py_ssize_t n_cn = plan.n_cn
        Py_ssize_t b0 = plan.elay.b0
        Py_ssize_t c0 = plan.elay.c0
        Py_ssize_t sb = plan.elay.sb
        Py_ssize_t sc = plan.elay.sc
        const idx_t[::1] y_dims = plan.y_dims
        const idx_t[::1] a_off = plan.elay.a_off
        const idx_t[::1] cone_id = plan.cone_id
        const idx_t[::1] cone_kinds = plan.cone_kinds
        const idx_t[::1] cone_sizes = plan.cone_sizes
        const idx_t[::1] cone_off = plan.cone_off
        const idx_t[::1] con_id = plan.con_id
        const idx_t[::1] tcon_id = plan.tcon_id
        const double[:, ::1] clo = plan.clo_stack
        const double[:, ::1] chi = plan.chi_stack
        const double[:, ::1] tlo = plan.tlo_stack
        const double[:, ::1] thi = plan.thi_stack
        Py_ssize_t i, j, m, abase, base, pos, b, szb, kind, cid, l
        double v

    with nogil:
        for i in range(nnl):
            m = y_dims[i]
            abase = a_off[i]
            cid = cone_id[i]
            pos = abase
            for b in range(cone_off[cid], cone_off[cid + 1]):
                kind = cone_kinds[b]
                szb = cone_sizes[b]
                if kind == 0:
                    for j in range(szb):
                        if eta[pos + j] < 0.0:
                            eta[pos + j] = 0.0
                elif kind == 2:
                    for j in range(szb):
                        eta[pos + j] = 0.0
                elif kind == 3:
                    _soc_inplace(eta, pos, szb)
                pos += szb
            if eta[abase + m] < 0.0:
                eta[abase + m] = 0.0
            cid = con_id[i]
            pos = abase + m + 1
            for j in range(n_c):
                v = eta[pos + j]
                if v < clo[cid, j]:
                    eta[pos + j] = clo[cid, j]
                elif v > chi[cid, j]:
                    eta[pos + j] = chi[cid, j]

        for i in range(1, nn):
            base = b0 + (i - 1) * sb
            eta[base + sb - 2] -= 0.5
            eta[base + sb - 1] += 0.5
            _soc_inplace(eta, base, sb)
            eta[base + sb - 2] += 0.5
            eta[base + sb - 1] -= 0.5

        for l in range(nn - nnl):
            base = c0 + l * sc
            cid = tcon_id[l]
            for j in range(n_cn):
                v = eta[base + j]
                if v < tlo[cid, j]:
                    eta[base + j] = tlo[cid, j]
                elif v > thi[cid, j]:
                    eta[base + j] = thi[cid, j]
            base += n_cn
            eta[base + sc - n_cn - 2] -= 0.5
            eta[base + sc - n_cn - 1] += 0.5
            _soc_inplace(eta, base, sc - n_cn)
            eta[base + sc - n_cn - 2] += 0.5
            eta[base + sc - n_cn - 1] -= 0.5


def project_s2(proj, double[::1] z):
    cdef:
        const idx_t[::1] uid = proj.uid
        const idx_t[::1] g_idx = proj.g_idx
        const idx_t[::1] g_off = proj.g_off
        const idx_t[::1] bas_off = proj.bas_off
        const idx_t[::1] bas_dim = proj.bas_dim
        const idx_t[::1] bas_rank = proj.bas_rank
        const double[::1] bas = proj.bas_flat
        Py_ssize_t nnl = uid.shape[0]
        Py_ssize_t i, j, rr, u, dimu, ranku, boff, goff
        double s

    if nnl == 0:
        return
    gbuf_arr = np.empty(int(np.max(proj.bas_dim)), dtype=np.float64)
    tbuf_arr = np.empty(max(1, int(np.max(proj.bas_rank))), dtype=np.float64)
    cdef double[::1] gbuf = gbuf_arr
    cdef double[::1] tbuf = tbuf_arr

    with nogil:
        for i in range(nnl):
            u = uid[i]
            dimu = bas_dim[u]
            ranku = bas_rank[u]
            boff = bas_off[u]
            goff = g_off[i]
            for j in range(dimu):
                gbuf[j] = z[g_idx[goff + j]]
            for rr in range(ranku):
                s = 0.0
                for j in range(dimu):
                    s += bas[boff + j * ranku + rr] * gbuf[j]
                tbuf[rr] = s
            for j in range(dimu):
                s = 0.0
                for rr in range(ranku):
                    s += bas[boff + j * ranku + rr] * tbuf[rr]
                z[g_idx[goff + j]] = gbuf[j] - s


def s1_online(plan, dp, double[:, ::1] x, double[:, ::1] u, const double[::1] x0v,
              double[:, ::1] q, double[:, ::1] d):
    cdef:
        Py_ssize_t nn = plan.num_nodes
        Py_ssize_t nnl = plan.n_nonleaf
        Py_ssize_t nx = plan.n_x
        Py_ssize_t nu = plan.n_u
        Py_ssize_t horizon = plan.horizon
        const idx_t[::1] anc = plan.anc
        const idx_t[::1] child_start = plan.child_start
        const idx_t[::1] child_count = plan.child_count
        const idx_t[::1] stage_ptr = plan.stage_ptr
        const idx_t[::1] A_id = plan.A_id
        const idx_t[::1] B_id = plan.B_id
        const double[:, :, ::1] A = plan.A_stack
        const double[:, :, ::1] B = plan.B_stack
        const double[:, :, ::1] Abar = dp.Abar
        const double[:, :, ::1] K = dp.K
        const double[:, :, ::1] Rt_inv = dp.Rt_inv
        const double[:, :, ::1] M1 = dp.M1
        Py_ssize_t t, i, c, j, kk, bidx, cs, ce
        double s

    acc_u_arr = np.empty(nu, dtype=np.float64)
    acc_x_arr = np.empty(nx, dtype=np.float64)
    rhs_arr = np.empty(nu, dtype=np.float64)
    cdef double[::1] acc_u = acc_u_arr
    cdef double[::1] acc_x = acc_x_arr
    cdef double[::1] rhs = rhs_arr

    with nogil:
        for i in range(nnl, nn):
            for j in range(nx):
                q[i, j] = -x[i, j]

        for t in range(horizon - 1, -1, -1):
            for i in range(stage_ptr[t], stage_ptr[t + 1]):
                for j in range(nu):
                    acc_u[j] = 0.0
                for j in range(nx):
                    acc_x[j] = 0.0
                cs = child_start[i]
                ce = cs + child_count[i]
                for c in range(cs, ce):
                    bidx = B_id[c]
                    for j in range(nu):
                        s = 0.0
                        for kk in range(nx):
                            s += B[bidx, kk, j] * q[c, kk]
                        acc_u[j] += s
                    for j in range(nx):
                        s = 0.0
                        for kk in range(nx):
                            s += Abar[c, kk, j] * q[c, kk]
                        acc_x[j] += s
                for j in range(nu):
                    rhs[j] = u[i, j] - acc_u[j]
                for j in range(nu):
                    s = 0.0
                    for kk in range(nu):
                        s += Rt_inv[i, j, kk] * rhs[kk]
                    d[i, j] = s
                for j in range(nx):
                    s = acc_x[j] - x[i, j]
                    for kk in range(nu):
                        s += K[i, kk, j] * (d[i, kk] - u[i, kk])
                        s += M1[i, j, kk] * d[i, kk]
                    q[i, j] = s

        for j in range(nx):
            x[0, j] = x0v[j]
        for t in range(horizon):
            for i in range(stage_ptr[t], stage_ptr[t + 1]):
                for j in range(nu):
                    s = d[i, j]
                    for kk in range(nx):
                        s += K[i, j, kk] * x[i, kk]
                    u[i, j] = s
            for c in range(stage_ptr[t + 1], stage_ptr[t + 2]):
                i = anc[c]
                bidx = A_id[c]
                for j in range(nx):
                    s = 0.0
                    for kk in range(nx):
                        s += A[bidx, j, kk] * x[i, kk]
                    for kk in range(nu):
                        s += B[B_id[c], j, kk] * u[i, kk]
                    x[c, j] = s
