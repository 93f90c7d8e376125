import numpy as np
import pytest

from raocp import model, splitting as sp, tree
from raocp.errors import ValidationError
from tests.conftest import make_instance, random_tree


def dense_L(p):
    """Materialize L column by column through apply_L (oracle helper)."""
    plan = sp.get_plan(p)
    cols = []
    for j in range(plan.zlay.dim):
        e = np.zeros(plan.zlay.dim)
        e[j] = 1.0
        cols.append(plan.L(e.copy()))
    return np.column_stack(cols)


class TestUnitFixture:
    """Hand-evaluated image blocks on the two-leaf depth-one instance."""

    def build(self, r_weight=1.0):
        t = tree.build_from_iid((0.3, 0.7), 1)
        return make_instance(t, 1, 1, random_dynamics=False, a=0.95,
                             r=r_weight, x0=np.zeros(1))

    def fill(self, p):
        plan = sp.get_plan(p)
        z = sp.PrimalDualVector(plan.zlay)
        z.s0 = 2.0
        z.y_node(0)[:] = (1.0, 0.0, 0.0, 0.0, 0.0)
        z.x[0] = 3.0
        z.u[0] = 5.0
        z.x[1] = 7.0
        z.tau[0] = 4.0
        z.s[0] = 2.0
        return z

    def test_blocks(self):
        p = self.build()
        eta = sp.apply_L(p, self.fill(p))
        np.testing.assert_allclose(eta.nonleaf_y(0), [1, 0, 0, 0, 0])
        assert eta.nonleaf_scalar(0) == pytest.approx(2.0 - 0.3)
        np.testing.assert_allclose(eta.nonleaf_constr(0), [3.0, 5.0])
        np.testing.assert_allclose(eta.node_block(1), [3.0, 5.0, 2.0, 2.0])
        np.testing.assert_allclose(eta.leaf_constr(0), [7.0])
        np.testing.assert_allclose(eta.leaf_soc(0), [7.0, 1.0, 1.0])

    def test_input_weight_scales_u_entry(self):
        p = self.build(r_weight=10.0)
        eta = sp.apply_L(p, self.fill(p))
        np.testing.assert_allclose(eta.node_block(1),
                                   [3.0, np.sqrt(10) * 5.0, 2.0, 2.0])

    def test_zero_maps_to_zero(self):
        p = self.build()
        plan = sp.get_plan(p)
        eta = sp.apply_L(p, sp.PrimalDualVector(plan.zlay))
        np.testing.assert_allclose(eta.data, 0.0)

    def test_homogeneity(self):
        p = self.build()
        plan = sp.get_plan(p)
        rng = np.random.default_rng(3)
        z = rng.standard_normal(plan.zlay.dim)
        np.testing.assert_allclose(plan.L(2 * z), 2 * plan.L(z), atol=1e-12)


class TestAdjoint:
    @pytest.mark.parametrize("seed", range(4))
    def test_identity_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        t = random_tree(rng)
        p = make_instance(t, int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                          seed=seed)
        plan = sp.get_plan(p)
        for _ in range(25):
            z = rng.standard_normal(plan.zlay.dim)
            eta = rng.standard_normal(plan.elay.dim)
            a = plan.L(z) @ eta
            b = z @ plan.L_adj(eta)
            assert abs(a - b) <= 1e-10 * (1 + abs(a))

    def test_zero(self, small_problem):
        plan = sp.get_plan(small_problem)
        np.testing.assert_allclose(plan.L_adj(plan.elay.new()), 0.0)

    def test_one_hot_columns_match_L(self, unit_fixture):
        # probing L* with unit vectors reproduces the rows of the dense L
        L = dense_L(unit_fixture)
        plan = sp.get_plan(unit_fixture)
        for i in range(plan.elay.dim):
            e = np.zeros(plan.elay.dim)
            e[i] = 1.0
            np.testing.assert_allclose(plan.L_adj(e), L[i, :], atol=1e-12)

    def test_shape_validation(self, small_problem, unit_fixture):
        plan_other = sp.get_plan(unit_fixture)
        z_other = sp.PrimalDualVector(plan_other.zlay)
        with pytest.raises(ValidationError):
            sp.apply_L(small_problem, z_other)


class TestSerialization:
    def test_round_trip_primal(self, small_problem):
        plan = sp.get_plan(small_problem)
        rng = np.random.default_rng(0)
        flat = rng.standard_normal(plan.zlay.dim)
        z = sp.PrimalDualVector.from_flat(plan.zlay, flat)
        np.testing.assert_array_equal(z.flatten(), flat)
        # views cover the whole vector exactly once
        rebuilt = np.concatenate(
            [[z.s0], z.x.ravel(), z.u.ravel(), z.y, z.tau, z.s])
        np.testing.assert_array_equal(rebuilt, flat)

    def test_round_trip_image(self, small_problem):
        plan = sp.get_plan(small_problem)
        rng = np.random.default_rng(1)
        flat = rng.standard_normal(plan.elay.dim)
        eta = sp.ImageVector.from_flat(plan.elay, flat)
        np.testing.assert_array_equal(eta.flatten(), flat)
        parts = []
        for i in range(plan.n_nonleaf):
            parts += [eta.nonleaf_y(i), [eta.nonleaf_scalar(i)],
                      eta.nonleaf_constr(i)]
        for i in range(1, plan.num_nodes):
            parts.append(eta.node_block(i))
        for j in range(plan.n_leaf):
            parts += [eta.leaf_constr(j), eta.leaf_soc(j)]
        np.testing.assert_array_equal(np.concatenate(parts), flat)


class TestOperatorNorm:
    def test_matches_dense_svd(self, unit_fixture):
        est = sp.estimate_operator_norm(unit_fixture, tol=1e-12)
        L = dense_L(unit_fixture)
        want = np.linalg.svd(L, compute_uv=False)[0]
        assert est == pytest.approx(want, rel=1e-6)

    def test_matches_dense_svd_small_benchmark(self, small_problem):
        est = sp.estimate_operator_norm(small_problem, tol=1e-12)
        L = dense_L(small_problem)
        want = np.linalg.svd(L, compute_uv=False)[0]
        assert est == pytest.approx(want, rel=1e-6)

    def test_horizon_independent(self):
        p2 = model.build_server_benchmark(3, 2, 2, (0.3, 0.7), 0.95)
        p8 = model.build_server_benchmark(3, 2, 8, (0.3, 0.7), 0.95)
        n2 = sp.estimate_operator_norm(p2, tol=1e-12)
        n8 = sp.estimate_operator_norm(p8, tol=1e-12)
        assert n8 == pytest.approx(n2, rel=1e-6)

    def test_tracks_norm_under_weight_scaling(self, pair_tree):
        # the estimator follows the true norm when the cost weights scale
        # (the dense oracle is recomputed per instance)
        for q in (1.0, 4.0, 25.0):
            p = make_instance(pair_tree, 2, 2, seed=7, q=q, r=q, qn=q)
            est = sp.estimate_operator_norm(p, tol=1e-12)
            want = np.linalg.svd(dense_L(p), compute_uv=False)[0]
            assert est == pytest.approx(want, rel=1e-6)

    def test_estimator_homogeneity(self, pair_tree):
        # doubling every weighted row of L doubles the estimate; the
        # unweighted passthrough rows stay dominated in this instance
        p1 = make_instance(pair_tree, 2, 2, seed=7, q=100.0, r=100.0, qn=100.0)
        p2 = make_instance(pair_tree, 2, 2, seed=7, q=400.0, r=400.0, qn=400.0)
        n1 = sp.estimate_operator_norm(p1, tol=1e-12)
        n2 = sp.estimate_operator_norm(p2, tol=1e-12)
        assert n2 == pytest.approx(2 * n1, rel=1e-2)

    def test_upper_bounds_rayleigh_quotients(self, small_problem):
        plan = sp.get_plan(small_problem)
        est = sp.estimate_operator_norm(small_problem, tol=1e-10)
        bound = sp.NORM_SAFETY * est
        rng = np.random.default_rng(2)
        for _ in range(100):
            z = rng.standard_normal(plan.zlay.dim)
            assert np.linalg.norm(plan.L(z)) <= bound * np.linalg.norm(z)

    def test_default_alpha_contract(self, small_problem):
        alpha = sp.default_alpha(small_problem)
        nrm = sp.estimate_operator_norm(small_problem)
        assert 0 < alpha * nrm < 1

    def test_bad_tol(self, small_problem):
        with pytest.raises(ValidationError):
            sp.estimate_operator_norm(small_problem, tol=0.0)
