import numpy as np
import pytest
import scipy.linalg
import scipy.optimize

from raocp import model, prox, risk, splitting as sp, tree
from tests.conftest import make_instance, random_tree


def lsq_projection_oracle(p, xbar, ubar):
    """Equality-constrained least squares on the stacked dynamics (KKT)."""
    t = p.tree
    n_x, n_u = p.n_x, p.n_u
    nv = t.num_nodes * n_x + t.num_nonleaf * n_u

    def xs(i):
        return slice(i * n_x, (i + 1) * n_x)

    def us(i):
        return slice(t.num_nodes * n_x + i * n_u,
                     t.num_nodes * n_x + (i + 1) * n_u)

    rows, rhs = [], []
    E0 = np.zeros((n_x, nv))
    E0[:, xs(0)] = np.eye(n_x)
    rows.append(E0)
    rhs.append(p.x0)
    for i in range(t.num_nonleaf):
        for c in t.children_of(i):
            E = np.zeros((n_x, nv))
            E[:, xs(c)] = np.eye(n_x)
            E[:, xs(i)] -= p.A_of(c)
            E[:, us(i)] -= p.B_of(c)
            rows.append(E)
            rhs.append(np.zeros(n_x))
    D = np.vstack(rows)
    dvec = np.concatenate(rhs)
    vbar = np.concatenate([np.asarray(xbar).ravel(), np.asarray(ubar).ravel()])
    kkt = np.block([[np.eye(nv), D.T], [D, np.zeros((D.shape[0],) * 2)]])
    sol = np.linalg.solve(kkt, np.concatenate([vbar, dvec]))
    return sol[:t.num_nodes * n_x].reshape(-1, n_x), \
        sol[t.num_nodes * n_x:nv].reshape(-1, n_u)


def soc_projection_oracle(v):
    """Nearest point in the second-order cone via constrained minimization."""
    v = np.asarray(v, dtype=np.float64)
    d = v.size

    def objective(w):
        return 0.5 * np.sum((w - v) ** 2)

    def grad(w):
        return w - v

    cons = [{"type": "ineq",
             "fun": lambda w: w[-1] - np.linalg.norm(w[:-1])}]
    best = None
    for start in (np.zeros(d), np.abs(v), np.concatenate([v[:-1] * 0.5,
                                                          [abs(v[-1]) + 1]])):
        res = scipy.optimize.minimize(objective, start, jac=grad,
                                      constraints=cons, method="SLSQP",
                                      options={"maxiter": 400, "ftol": 1e-14})
        if best is None or res.fun < best.fun:
            best = res
    return best.x


class TestDpOffline:
    def chain(self, a, b):
        t = tree.build_from_iid((1.0,), 1)
        p = make_instance(t, 1, 1, random_dynamics=False)
        p.dynamics = model.Dynamics(np.full((1, 1, 1), a), np.full((1, 1, 1), b))
        return p

    def test_hand_recursion(self):
        cache = prox.dp_offline(self.chain(2.0, 1.0))
        assert cache.P[1][0, 0] == pytest.approx(1.0)
        assert cache.Rt_chol[0][0, 0] ** 2 == pytest.approx(2.0)
        assert cache.K[0][0, 0] == pytest.approx(-1.0)
        assert cache.Abar[1][0, 0] == pytest.approx(1.0)
        assert cache.P[0][0, 0] == pytest.approx(3.0)

    def test_no_input_degeneracy(self):
        cache = prox.dp_offline(self.chain(1.5, 0.0))
        assert cache.Rt_chol[0][0, 0] ** 2 == pytest.approx(1.0)
        assert cache.K[0][0, 0] == pytest.approx(0.0)
        assert cache.Abar[1][0, 0] == pytest.approx(1.5)
        assert cache.P[0][0, 0] == pytest.approx(1.0 + 1.5 ** 2)

    def test_zero_dynamics(self):
        cache = prox.dp_offline(self.chain(0.0, 0.0))
        assert cache.K[0][0, 0] == pytest.approx(0.0)
        np.testing.assert_allclose(cache.P[:, 0, 0], 1.0)

    def test_value_matrices_psd_symmetric(self, small_problem):
        cache = prox.dp_offline(small_problem)
        for i in range(small_problem.tree.num_nodes):
            Pm = cache.P[i]
            np.testing.assert_allclose(Pm, Pm.T, atol=1e-12)
            assert np.linalg.eigvalsh(Pm).min() >= 1.0 - 1e-9


class TestProjectS1:
    def test_hand_example(self):
        t = tree.build_from_iid((1.0,), 1)
        p = make_instance(t, 1, 1, random_dynamics=False, x0=np.zeros(1))
        cache = prox.dp_offline(p)
        x, u = prox.project_s1(p, cache, [[0.0], [0.0]], [[1.0]])
        np.testing.assert_allclose(x.ravel(), [0.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(u.ravel(), [0.5], atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_lsq_oracle_random_trees(self, seed):
        rng = np.random.default_rng(100 + seed)
        t = random_tree(rng, max_nodes=15)
        p = make_instance(t, int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                          seed=seed)
        cache = prox.dp_offline(p)
        xbar = rng.standard_normal((t.num_nodes, p.n_x))
        ubar = rng.standard_normal((t.num_nonleaf, p.n_u))
        x, u = prox.project_s1(p, cache, xbar, ubar)
        xo, uo = lsq_projection_oracle(p, xbar, ubar)
        np.testing.assert_allclose(x, xo, atol=1e-8)
        np.testing.assert_allclose(u, uo, atol=1e-8)

    def test_feasible_point_unchanged(self, small_problem):
        p = small_problem
        cache = prox.dp_offline(p)
        rng = np.random.default_rng(0)
        t = p.tree
        x = np.zeros((t.num_nodes, p.n_x))
        u = rng.standard_normal((t.num_nonleaf, p.n_u))
        x[0] = p.x0
        for i in range(1, t.num_nodes):
            a = t.ancestor_of[i]
            x[i] = p.A_of(i) @ x[a] + p.B_of(i) @ u[a]
        xp, up = prox.project_s1(p, cache, x, u)
        np.testing.assert_allclose(xp, x, atol=1e-10)
        np.testing.assert_allclose(up, u, atol=1e-10)

    def test_idempotent(self, small_problem):
        p = small_problem
        cache = prox.dp_offline(p)
        rng = np.random.default_rng(1)
        xbar = rng.standard_normal((p.tree.num_nodes, p.n_x))
        ubar = rng.standard_normal((p.tree.num_nonleaf, p.n_u))
        x1, u1 = prox.project_s1(p, cache, xbar, ubar)
        x2, u2 = prox.project_s1(p, cache, x1, u1)
        np.testing.assert_allclose(x2, x1, atol=1e-10)
        np.testing.assert_allclose(u2, u1, atol=1e-10)

    def test_output_satisfies_dynamics(self, small_problem):
        p = small_problem
        cache = prox.dp_offline(p)
        rng = np.random.default_rng(2)
        x, u = prox.project_s1(
            p, cache, rng.standard_normal((p.tree.num_nodes, p.n_x)),
            rng.standard_normal((p.tree.num_nonleaf, p.n_u)))
        np.testing.assert_allclose(x[0], p.x0, atol=1e-12)
        for i in range(1, p.tree.num_nodes):
            a = p.tree.ancestor_of[i]
            np.testing.assert_allclose(
                x[i], p.A_of(i) @ x[a] + p.B_of(i) @ u[a], atol=1e-10)


class TestKernelProjectors:
    def test_kernel_membership(self, small_problem):
        p = small_problem
        proj = prox.build_kernel_projectors(p)
        plan = sp.get_plan(p)
        rng = np.random.default_rng(0)
        z = rng.standard_normal(plan.zlay.dim)
        out = prox.project_s2(proj, sp.PrimalDualVector(plan.zlay, z.copy()))
        for i in range(plan.n_nonleaf):
            rep = p.risks[i]
            y = out.y_node(i)
            ch = p.tree.children_of(i)
            resid = rep.E.T @ y - (out.tau[ch - 1] + out.s[ch - 1])
            assert np.abs(resid).max() <= 1e-10 * max(1.0, np.abs(z).max())

    def test_dims_match_spec_shape(self):
        rep = risk.build_avar(0.95, (0.3, 0.7))
        n = rep.n
        M = np.hstack([rep.E.T, -np.eye(n), -np.eye(n)])
        assert M.shape == (2, 9)

    def test_matches_pinv_oracle(self, small_problem):
        p = small_problem
        proj = prox.build_kernel_projectors(p)
        rep = p.risks[0]
        n = rep.n
        M = np.hstack([rep.E.T, -np.eye(n), -np.eye(n)])
        P_oracle = np.eye(M.shape[1]) - np.linalg.pinv(M) @ M
        rng = np.random.default_rng(5)
        Q = proj.basis[proj.uid[0]]
        for _ in range(20):
            v = rng.standard_normal(M.shape[1])
            want = P_oracle @ v
            got = v - Q @ (Q.T @ v)
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_zero_and_idempotence(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        proj = prox.build_kernel_projectors(p)
        zero = prox.project_s2(proj, sp.PrimalDualVector(plan.zlay))
        np.testing.assert_allclose(zero.data, 0.0)
        rng = np.random.default_rng(6)
        z1 = prox.project_s2(proj, sp.PrimalDualVector(
            plan.zlay, rng.standard_normal(plan.zlay.dim)))
        z2 = prox.project_s2(proj, z1)
        np.testing.assert_allclose(z2.data, z1.data, atol=1e-10)

    def test_member_unchanged(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        proj = prox.build_kernel_projectors(p)
        # construct a kernel member: pick y, set tau+s split of E'y
        z = sp.PrimalDualVector(plan.zlay)
        rng = np.random.default_rng(7)
        for i in range(plan.n_nonleaf):
            y = rng.standard_normal(5)
            z.y_node(i)[:] = y
            target = p.risks[i].E.T @ y
            ch = p.tree.children_of(i)
            z.tau[ch - 1] = 0.25 * target
            z.s[ch - 1] = 0.75 * target
        out = prox.project_s2(proj, z)
        np.testing.assert_allclose(out.data, z.data, atol=1e-10)

    def test_rank_deficient_fallback(self):
        # duplicated risk rows make M'M rank deficient; the orthonormal
        # basis still has full column rank and projects exactly
        E = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        M = np.hstack([E.T, -np.eye(2), -np.eye(2)])
        Q = scipy.linalg.orth(M.T)
        P_oracle = np.eye(7) - np.linalg.pinv(M) @ M
        rng = np.random.default_rng(8)
        v = rng.standard_normal(7)
        np.testing.assert_allclose(v - Q @ (Q.T @ v), P_oracle @ v, atol=1e-10)


class TestProjectSoc:
    def test_outside_point(self):
        out = prox.project_soc(np.array([3.0, 4.0, 0.0]))
        np.testing.assert_allclose(out, [1.5, 2.0, 2.5])

    def test_inside_unchanged(self):
        v = np.array([1.0, 2.0, 10.0])
        np.testing.assert_allclose(prox.project_soc(v), v)

    def test_polar_maps_to_zero(self):
        np.testing.assert_allclose(prox.project_soc(np.array([1.0, 0.0, -5.0])),
                                   np.zeros(3))

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_nearest_point_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        v = rng.standard_normal(d) * 2
        got = prox.project_soc(v)
        want = soc_projection_oracle(v)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_firmly_nonexpansive(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.standard_normal(4) * 3
            y = rng.standard_normal(4) * 3
            px, py = prox.project_soc(x), prox.project_soc(y)
            assert (px - py) @ (px - py) <= (px - py) @ (x - y) + 1e-9


class TestProjectS3:
    def test_member_unchanged(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        rng = np.random.default_rng(0)
        eta = sp.ImageVector(plan.elay)
        for i in range(plan.n_nonleaf):
            eta.nonleaf_y(i)[:] = np.abs(rng.standard_normal(5))
            eta.nonleaf_y(i)[-1] = rng.standard_normal()   # free dual slot
            eta.data[plan.e_idx[i]] = abs(rng.standard_normal())
            eta.nonleaf_constr(i)[:] = rng.uniform(-1, 1, plan.n_c)
        for i in range(1, plan.num_nodes):
            blk = eta.node_block(i)
            v = rng.standard_normal(blk.size - 2) * 0.1
            quad = v @ v
            blk[:-2] = v
            blk[-2] = 0.5 * (quad + 0.3)
            blk[-1] = 0.5 * (quad + 0.3)
        for j in range(plan.n_leaf):
            eta.leaf_constr(j)[:] = rng.uniform(-1, 1, plan.n_cn)
            blk = eta.leaf_soc(j)
            v = rng.standard_normal(blk.size - 2) * 0.1
            quad = v @ v
            blk[:-2] = v
            blk[-2] = 0.5 * (quad + 0.2)
            blk[-1] = 0.5 * (quad + 0.2)
        out = prox.project_s3(p, eta)
        np.testing.assert_allclose(out.data, eta.data, atol=1e-12)

    def test_epigraph_encoding_identity(self):
        # the translated cone contains exactly the blocks whose quadratic
        # part is dominated by the epigraph value
        rng = np.random.default_rng(1)
        for _ in range(1000):
            v = rng.standard_normal(4)
            quad = v @ v
            margin = rng.standard_normal()
            tau = quad + margin
            block = np.concatenate([v, [0.5 * tau, 0.5 * tau]])
            shifted = block - np.array([0, 0, 0, 0, 0.5, -0.5])
            w, t = shifted[:-1], shifted[-1]
            inside = np.linalg.norm(w) <= t + 1e-12
            assert inside == (quad <= tau + 1e-12)

    def test_box_block_clamped(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        eta = sp.ImageVector(plan.elay)
        eta.nonleaf_constr(0)[:2] = [1.5, -0.2]
        out = prox.project_s3(p, eta)
        assert out.nonleaf_constr(0)[0] == pytest.approx(1.0)
        assert out.nonleaf_constr(0)[1] == pytest.approx(-0.2)

    def test_scalar_clamped(self, small_problem):
        plan = sp.get_plan(small_problem)
        eta = sp.ImageVector(plan.elay)
        eta.data[plan.e_idx] = [-1.0, 0.5, 2.0]
        out = prox.project_s3(small_problem, eta)
        np.testing.assert_allclose(out.data[plan.e_idx], [0.0, 0.5, 2.0])

    def test_idempotent_and_firmly_nonexpansive(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.standard_normal(plan.elay.dim) * 2
            b = rng.standard_normal(plan.elay.dim) * 2
            pa = prox.project_s3(p, sp.ImageVector(plan.elay, a.copy())).data
            pb = prox.project_s3(p, sp.ImageVector(plan.elay, b.copy())).data
            pa2 = prox.project_s3(p, sp.ImageVector(plan.elay, pa.copy())).data
            np.testing.assert_allclose(pa2, pa, atol=1e-9)
            assert (pa - pb) @ (pa - pb) <= (pa - pb) @ (a - b) + 1e-9


def brute_force_prox_f(p, alpha, zbar, penalty=1e7):
    """Penalty-method minimizer of f(v) + ||v - zbar||^2 / (2 alpha)."""
    plan = sp.get_plan(p)
    zl = plan.zlay
    t = p.tree

    def objective(v):
        val = v[0] + np.sum((v - zbar) ** 2) / (2 * alpha)
        g = (v - zbar) / alpha
        g[0] += 1.0
        x = zl.x(v)
        u = zl.u(v)
        gx = zl.x(g)
        gu = zl.u(g)
        err0 = x[0] - p.x0
        val += penalty * err0 @ err0
        gx[0] += 2 * penalty * err0
        for i in range(1, t.num_nodes):
            a = t.ancestor_of[i]
            err = x[i] - p.A_of(i) @ x[a] - p.B_of(i) @ u[a]
            val += penalty * err @ err
            gx[i] += 2 * penalty * err
            gx[a] -= 2 * penalty * p.A_of(i).T @ err
            gu[a] -= 2 * penalty * p.B_of(i).T @ err
        for i in range(t.num_nonleaf):
            rep = p.risks[i]
            ch = t.children_of(i)
            y = zl.y_node(v, i)
            gy = zl.y_node(g, i)
            err = rep.E.T @ y - (zl.tau(v)[ch - 1] + zl.s(v)[ch - 1])
            val += penalty * err @ err
            gy += 2 * penalty * rep.E @ err
            zl.tau(g)[ch - 1] -= 2 * penalty * err
            zl.s(g)[ch - 1] -= 2 * penalty * err
        return val, g

    res = scipy.optimize.minimize(objective, zbar.copy(), jac=True,
                                  method="L-BFGS-B",
                                  options={"maxiter": 4000, "ftol": 1e-16,
                                           "gtol": 1e-12})
    return res.x


class TestProxF:
    def test_scalar_shift(self, unit_fixture):
        p = unit_fixture
        plan = sp.get_plan(p)
        cache = prox.dp_offline(p)
        proj = prox.build_kernel_projectors(p)
        z = sp.PrimalDualVector(plan.zlay)
        z.s0 = 1.0
        out = prox.prox_f(p, cache, proj, 0.1, z)
        assert out.s0 == pytest.approx(0.9)

    def test_feasible_parts_untouched(self, unit_fixture):
        p = unit_fixture
        plan = sp.get_plan(p)
        cache = prox.dp_offline(p)
        proj = prox.build_kernel_projectors(p)
        z = sp.PrimalDualVector(plan.zlay)   # zero is feasible when x0 = 0
        z.s0 = 1.0
        out = prox.prox_f(p, cache, proj, 0.25, z)
        rest = out.data[1:]
        np.testing.assert_allclose(rest, z.data[1:], atol=1e-12)
        assert out.s0 == pytest.approx(0.75)

    @pytest.mark.parametrize("alpha", [0.3, 1.0])
    def test_matches_penalty_oracle(self, unit_fixture, alpha):
        p = unit_fixture
        plan = sp.get_plan(p)
        cache = prox.dp_offline(p)
        proj = prox.build_kernel_projectors(p)
        rng = np.random.default_rng(4)
        zbar = rng.standard_normal(plan.zlay.dim)
        got = prox.prox_f(p, cache, proj, alpha,
                          sp.PrimalDualVector(plan.zlay, zbar.copy()))
        want = brute_force_prox_f(p, alpha, zbar)
        np.testing.assert_allclose(got.data, want, atol=1e-5)


class TestProxGConj:
    def test_moreau_identity_alpha_one(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        rng = np.random.default_rng(5)
        eta = rng.standard_normal(plan.elay.dim)
        lhs = prox.prox_g_conj(p, 1.0, sp.ImageVector(plan.elay, eta.copy()))
        proj = prox.project_s3(p, sp.ImageVector(plan.elay, eta.copy()))
        np.testing.assert_allclose(lhs.data + proj.data, eta, atol=1e-10)

    @pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
    def test_extended_moreau_identity(self, small_problem, alpha):
        p = small_problem
        plan = sp.get_plan(p)
        rng = np.random.default_rng(6)
        eta = rng.standard_normal(plan.elay.dim) * 3
        out = prox.prox_g_conj(p, alpha, sp.ImageVector(plan.elay, eta.copy()))
        scaled = prox.project_s3(
            p, sp.ImageVector(plan.elay, eta / alpha)).data
        np.testing.assert_allclose(out.data + alpha * scaled, eta, atol=1e-12)

    def test_literal_variant_matches_at_alpha_one(self, small_problem):
        p = small_problem
        plan = sp.get_plan(p)
        rng = np.random.default_rng(7)
        eta = rng.standard_normal(plan.elay.dim)
        a = prox.prox_g_conj(p, 1.0, sp.ImageVector(plan.elay, eta.copy()))
        b = prox.prox_g_conj(p, 1.0, sp.ImageVector(plan.elay, eta.copy()),
                             paper_literal_prox=True)
        np.testing.assert_allclose(a.data, b.data, atol=1e-14)

    def test_cone_member_scaled_maps_to_zero_blocks(self, small_problem):
        # on untranslated cone blocks (the dual-cone slots), eta inside the
        # cone and alpha=1 gives prox 0 there
        p = small_problem
        plan = sp.get_plan(p)
        eta = sp.ImageVector(plan.elay)
        eta.nonleaf_y(0)[:] = [1.0, 2.0, 3.0, 4.0, -0.5]
        out = prox.prox_g_conj(p, 1.0, eta)
        np.testing.assert_allclose(out.nonleaf_y(0), 0.0, atol=1e-14)

    @pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
    def test_matches_blockwise_numeric_prox(self, unit_fixture, alpha):
        # support-function prox via the Moreau identity with the oracle
        # projector evaluated by constrained minimization, block by block
        p = unit_fixture
        plan = sp.get_plan(p)
        rng = np.random.default_rng(8)
        eta = rng.standard_normal(plan.elay.dim) * 2
        got = prox.prox_g_conj(p, alpha,
                               sp.ImageVector(plan.elay, eta.copy())).data

        scaled = sp.ImageVector(plan.elay, eta / alpha)
        oracle = sp.ImageVector(plan.elay, scaled.data.copy())
        # nonleaf block: orthant x free dual cone, clamp scalar, box
        y = scaled.nonleaf_y(0)
        oracle.nonleaf_y(0)[:4] = np.maximum(y[:4], 0.0)
        oracle.nonleaf_y(0)[4] = y[4]
        oracle.data[plan.e_idx[0]] = max(scaled.data[plan.e_idx[0]], 0.0)
        oracle.nonleaf_constr(0)[:] = np.clip(scaled.nonleaf_constr(0),
                                              -100, 100)
        shift = np.array([0.0, 0.0, 0.5, -0.5])
        for i in (1, 2):
            blk = scaled.node_block(i)
            oracle.node_block(i)[:] = soc_projection_oracle(blk - shift) + shift
        shift3 = np.array([0.0, 0.5, -0.5])
        for j in range(plan.n_leaf):
            oracle.leaf_constr(j)[:] = np.clip(scaled.leaf_constr(j), -100, 100)
            blk = scaled.leaf_soc(j)
            oracle.leaf_soc(j)[:] = soc_projection_oracle(blk - shift3) + shift3
        want = eta - alpha * oracle.data
        np.testing.assert_allclose(got, want, atol=1e-5)
