import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raocp import risk
from raocp.errors import ValidationError


def avar_vertices(a, pi):
    """All vertices of {mu : 0 <= mu <= pi/a, sum(mu) = 1} by enumeration.

    For the small dimensions used in tests every vertex saturates all but at
    most one coordinate at a bound, so scanning subsets is exhaustive.
    """
    n = len(pi)
    caps = pi / a if a > 0 else np.full(n, np.inf)
    verts = []
    for capped in itertools.product([0, 1], repeat=n):
        for free in range(n):
            mu = np.where(capped, np.minimum(caps, 1.0), 0.0)
            mu[free] = 0.0
            rest = 1.0 - mu.sum()
            if -1e-12 <= rest <= min(caps[free], 1.0) + 1e-12:
                mu[free] = max(rest, 0.0)
                verts.append(mu)
    return verts


class TestBuildAvar:
    def test_matrices_match_printed_form(self):
        rep = risk.build_avar(0.95, (0.3, 0.7))
        np.testing.assert_allclose(rep.b, [0.3, 0.7, 0.0, 0.0, 1.0])
        expected_E = np.array([
            [0.95, 0.0], [0.0, 0.95], [-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
        np.testing.assert_allclose(rep.E, expected_E)
        assert rep.F.shape == (5, 0)
        assert rep.cone.blocks == ((risk.NONNEG, 4), (risk.ZERO, 1))

    def test_expectation_setting(self):
        rep = risk.build_avar(1.0, (0.5, 0.5))
        np.testing.assert_allclose(rep.b, [0.5, 0.5, 0.0, 0.0, 1.0])
        np.testing.assert_allclose(rep.E[:2], np.eye(2))

    def test_worst_case_setting(self):
        rep = risk.build_avar(0.0, (0.3, 0.7))
        np.testing.assert_allclose(rep.E[:2], np.zeros((2, 2)))
        assert risk.evaluate_risk(rep, (5.0, -1.0)) == 5.0

    def test_invalid_inputs(self):
        with pytest.raises(ValidationError):
            risk.build_avar(1.5, (0.5, 0.5))
        with pytest.raises(ValidationError):
            risk.build_avar(0.5, (0.5, 0.6))
        with pytest.raises(ValidationError):
            risk.build_avar(0.5, (1.0, 0.0))

    def test_strong_duality_witness(self):
        # mu = pi lies strictly inside the cone constraint for 0 < a <= 1
        for a in (0.1, 0.5, 1.0):
            rep = risk.build_avar(a, (0.3, 0.7))
            slack = rep.b - rep.E @ rep.pi
            assert np.all(slack[:-1] >= -1e-12)
            assert abs(slack[-1]) <= 1e-12


class TestEvaluateRisk:
    def test_expectation_case(self):
        rep = risk.build_avar(1.0, (0.3, 0.7))
        assert risk.evaluate_risk(rep, (1.0, 2.0)) == pytest.approx(1.7)

    def test_max_case(self):
        rep = risk.build_avar(0.0, (0.3, 0.7))
        assert risk.evaluate_risk(rep, (1.0, 2.0)) == pytest.approx(2.0)

    def test_interpolating_case(self):
        rep = risk.build_avar(0.95, (0.3, 0.7))
        mu1 = 0.3 / 0.95
        assert risk.evaluate_risk(rep, (2.0, 1.0)) == pytest.approx(
            2 * mu1 + (1 - mu1))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 4), st.floats(0.05, 1.0), st.integers(0, 10_000))
    def test_matches_vertex_enumeration(self, n, a, seed):
        rng = np.random.default_rng(seed)
        pi = rng.random(n) + 0.05
        pi /= pi.sum()
        Z = rng.standard_normal(n) * 3
        rep = risk.build_avar(a, pi)
        got = risk.evaluate_risk(rep, Z)
        want = max(float(v @ Z) for v in avar_vertices(a, pi))
        assert got == pytest.approx(want, abs=1e-9)

    def test_matches_lp_path(self):
        rng = np.random.default_rng(1)
        pi = np.array([0.2, 0.3, 0.5])
        Z = rng.standard_normal(3)
        rep = risk.build_avar(0.6, pi)
        generic = risk.RiskConicRep(n=rep.n, n_nu=0, E=rep.E, F=rep.F,
                                    b=rep.b, cone=rep.cone)
        assert risk.evaluate_risk(rep, Z) == pytest.approx(
            risk.evaluate_risk(generic, Z), abs=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_coherence_properties(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        pi = rng.random(n) + 0.05
        pi /= pi.sum()
        a = float(rng.uniform(0.05, 1.0))
        rep = risk.build_avar(a, pi)
        Z = rng.standard_normal(n)
        Zp = Z + rng.random(n)          # elementwise larger
        c = float(rng.standard_normal())
        lam = float(rng.random() * 3)
        rho = risk.evaluate_risk
        assert rho(rep, Z) <= rho(rep, Zp) + 1e-9
        assert rho(rep, Z + c) == pytest.approx(rho(rep, Z) + c, abs=1e-9)
        assert rho(rep, lam * Z) == pytest.approx(lam * rho(rep, Z), abs=1e-9)


class TestConeProjection:
    def test_avar_dual_cone_clamps_orthant_passes_last(self):
        rep = risk.build_avar(0.95, (0.3, 0.7))
        y = np.array([-1.0, 2.0, 0.5, -3.0, -7.0])
        out = risk.project_dual_cone(rep.cone, y)
        np.testing.assert_allclose(out, [0.0, 2.0, 0.5, 0.0, -7.0])

    def test_idempotent_on_members(self):
        rep = risk.build_avar(0.5, (0.5, 0.5))
        y = np.array([1.0, 0.0, 2.0, 3.0, -4.0])
        out = risk.project_dual_cone(rep.cone, y)
        np.testing.assert_allclose(risk.project_dual_cone(rep.cone, out), out)

    def test_polar_direction_maps_to_zero_orthant_part(self):
        rep = risk.build_avar(0.5, (0.5, 0.5))
        y = np.array([-1.0, -2.0, -0.5, -3.0, 0.0])
        np.testing.assert_allclose(risk.project_dual_cone(rep.cone, y),
                                   np.zeros(5))

    def test_dimension_mismatch(self):
        rep = risk.build_avar(0.5, (0.5, 0.5))
        with pytest.raises(ValidationError):
            risk.project_dual_cone(rep.cone, np.zeros(4))

    def test_dual_pairs(self):
        cone = risk.ConeDescriptor(((risk.NONNEG, 2), (risk.ZERO, 1),
                                    (risk.FREE, 2), (risk.SOC, 3)))
        dual = cone.dual()
        assert dual.blocks == ((risk.NONNEG, 2), (risk.FREE, 1),
                               (risk.ZERO, 2), (risk.SOC, 3))
        assert cone.dual().dual() == cone

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_firmly_nonexpansive(self, seed):
        rng = np.random.default_rng(seed)
        cone = risk.ConeDescriptor(((risk.NONNEG, 3), (risk.SOC, 3),
                                    (risk.ZERO, 2)))
        x = rng.standard_normal(cone.dim) * 2
        y = rng.standard_normal(cone.dim) * 2
        px = risk.project_dual_cone(cone, x)
        py = risk.project_dual_cone(cone, y)
        lhs = float((px - py) @ (px - py))
        rhs = float((px - py) @ (x - y))
        assert lhs <= rhs + 1e-9

    def test_soc_inside_projection(self):
        cone = risk.ConeDescriptor(((risk.SOC, 3),))
        v = np.array([1.0, 2.0, 10.0])
        np.testing.assert_allclose(cone.project(v), v)
