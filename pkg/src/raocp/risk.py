"""Conic representations of coherent risk measures.

A risk measure rho(Z) = max { mu' Z : b - E mu - F nu in K } is carried
around as its (E, F, b, K) data.  Only the average value-at-risk family is
constructed here (expectation and worst case are its a=1 and a=0 settings),
but the cone machinery is generic so downstream projections do not care
which measure produced the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

NONNEG = "nonneg"
ZERO = "zero"
FREE = "free"
SOC = "soc"

_DUAL_KIND = {NONNEG: NONNEG, ZERO: FREE, FREE: ZERO, SOC: SOC}


def project_soc(v):
    """Euclidean projection onto the second-order cone, radius component last.

    For v = (w, t): returns v if ||w|| <= t, zero if ||w|| <= -t, and
    ((||w|| + t)/2) * (w/||w||, 1) otherwise.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size < 2:
        raise ValidationError("second-order cone needs dimension >= 2")
    w, t = v[:-1], v[-1]
    nw = np.linalg.norm(w)
    if nw <= t:
        return v.copy()
    if nw <= -t:
        return np.zeros_like(v)
    c = 0.5 * (nw + t)
    out = np.empty_like(v)
    out[:-1] = (c / nw) * w
    out[-1] = c
    return out


@dataclass(frozen=True)
class ConeDescriptor:
    """Ordered product of elementary cone blocks.

    Each block is a (kind, dim) pair with kind in {nonneg, zero, free, soc}.
    """

    blocks: tuple[tuple[str, int], ...]

    def __post_init__(self):
        for kind, dim in self.blocks:
            if kind not in _DUAL_KIND:
                raise ValidationError(f"unknown cone block kind {kind!r}")
            if dim < 1:
                raise ValidationError("cone block dims must be >= 1")
            if kind == SOC and dim < 2:
                raise ValidationError("SOC blocks need dimension >= 2")

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.blocks)

    def dual(self) -> "ConeDescriptor":
        return ConeDescriptor(tuple((_DUAL_KIND[k], d) for k, d in self.blocks))

    def project(self, y):
        """Blockwise Euclidean projection onto the cone."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.dim,):
            raise ValidationError(
                f"expected vector of dim {self.dim}, got shape {y.shape}")
        out = np.empty_like(y)
        pos = 0
        for kind, dim in self.blocks:
            seg = y[pos:pos + dim]
            if kind == NONNEG:
                out[pos:pos + dim] = np.maximum(seg, 0.0)
            elif kind == ZERO:
                out[pos:pos + dim] = 0.0
            elif kind == FREE:
                out[pos:pos + dim] = seg
            else:
                out[pos:pos + dim] = project_soc(seg)
            pos += dim
        return out


def project_dual_cone(cone: ConeDescriptor, y):
    """Projection onto the dual cone K* of ``cone``."""
    return cone.dual().project(y)


@dataclass(frozen=True)
class RiskConicRep:
    """Conic data (E, F, b, K) of a coherent risk measure over n outcomes."""

    n: int
    n_nu: int
    E: np.ndarray
    F: np.ndarray
    b: np.ndarray
    cone: ConeDescriptor
    # closed-form evaluation data; None for reps built from raw matrices
    avar_level: float | None = field(default=None)
    pi: np.ndarray | None = field(default=None)

    def __post_init__(self):
        m = self.cone.dim
        if self.E.shape != (m, self.n):
            raise ValidationError("E must be (dim K) x n")
        if self.F.shape != (m, self.n_nu):
            raise ValidationError("F must be (dim K) x n_nu")
        if self.b.shape != (m,):
            raise ValidationError("b must have dim K entries")


def build_avar(a: float, pi) -> RiskConicRep:
    """Average value-at-risk at level ``a`` over conditional probabilities ``pi``.

    The representation is b = (pi, 0_n, 1), E = [a I; -I; 1'] and
    K = R+^{2n} x {0}; a=1 recovers the expectation (the ambiguity set
    collapses to {pi}) and a=0 the worst case (full simplex).
    """
    pi = np.asarray(pi, dtype=np.float64).ravel()
    n = pi.size
    if n < 1:
        raise ValidationError("pi must be nonempty")
    if np.any(pi <= 0):
        raise ValidationError("pi entries must be positive")
    if abs(pi.sum() - 1.0) > 1e-12:
        raise ValidationError("pi must sum to 1")
    if not 0.0 <= a <= 1.0:
        raise ValidationError("risk level a must be in [0, 1]")

    eye = np.eye(n)
    E = np.vstack([a * eye, -eye, np.ones((1, n))])
    F = np.zeros((2 * n + 1, 0))
    b = np.concatenate([pi, np.zeros(n), [1.0]])
    cone = ConeDescriptor(((NONNEG, 2 * n), (ZERO, 1)))
    return RiskConicRep(n=n, n_nu=0, E=E, F=F, b=b, cone=cone,
                        avar_level=float(a), pi=pi)


def evaluate_risk(rep: RiskConicRep, Z) -> float:
    """Risk value max { mu' Z : b - E mu - F nu in K }.

    Average value-at-risk reps are evaluated in closed form by allocating
    mass min(pi_i / a, remaining) to the largest entries of Z (worst case
    for a = 0).  Reps made of polyhedral blocks fall back to an LP.  Used
    for reporting and testing only, never inside the solver loop.
    """
    Z = np.asarray(Z, dtype=np.float64).ravel()
    if Z.size != rep.n:
        raise ValidationError("Z must have one entry per outcome")

    if rep.avar_level is not None:
        a = rep.avar_level
        if a == 0.0:
            return float(Z.max())
        caps = rep.pi / a
        order = np.argsort(-Z)
        remaining = 1.0
        value = 0.0
        for idx in order:
            take = min(caps[idx], remaining)
            value += take * Z[idx]
            remaining -= take
            if remaining <= 0:
                break
        return float(value)

    return _evaluate_risk_lp(rep, Z)


def _evaluate_risk_lp(rep: RiskConicRep, Z) -> float:
    from scipy.optimize import linprog

    if any(kind == SOC for kind, _ in rep.cone.blocks):
        raise NotImplementedError("LP evaluation only covers polyhedral cones")

    # b - E mu - F nu in K, split into inequality (nonneg) and equality
    # (zero) rows; free rows are vacuous.
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    G = np.hstack([rep.E, rep.F])
    pos = 0
    for kind, dim in rep.cone.blocks:
        rows = slice(pos, pos + dim)
        if kind == NONNEG:
            A_ub.append(G[rows])
            b_ub.append(rep.b[rows])
        elif kind == ZERO:
            A_eq.append(G[rows])
            b_eq.append(rep.b[rows])
        pos += dim
    res = linprog(
        c=-np.concatenate([Z, np.zeros(rep.n_nu)]),
        A_ub=np.vstack(A_ub) if A_ub else None,
        b_ub=np.concatenate(b_ub) if b_ub else None,
        A_eq=np.vstack(A_eq) if A_eq else None,
        b_eq=np.concatenate(b_eq) if b_eq else None,
        bounds=(None, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"risk LP failed: {res.message}")
    return float(-res.fun)
