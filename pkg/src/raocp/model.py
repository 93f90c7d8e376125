"""Problem assembly: dynamics, costs, constraints and risk data per node."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import risk as _risk
from .errors import ValidationError
from .tree import ScenarioTree, build_from_iid

SYM_TOL = 1e-12
PSD_TOL = 1e-10


def symmetric_sqrt(M) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Requires M symmetric to 1e-12 and eigenvalues >= -1e-10; tiny negative
    eigenvalues are clipped to zero.
    """
    M = np.asarray(M, dtype=np.float64)
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > SYM_TOL * scale:
        raise ValidationError("matrix is not symmetric")
    w, V = np.linalg.eigh(M)
    if w.min() < -PSD_TOL * scale:
        raise ValidationError(f"matrix is not PSD (min eigenvalue {w.min():g})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True)
class Dynamics:
    """State/input matrices per event: A is (d, n_x, n_x), B is (d, n_x, n_u)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A, B = np.asarray(self.A, float), np.asarray(self.B, float)
        if A.ndim != 3 or B.ndim != 3 or A.shape[0] != B.shape[0]:
            raise ValidationError("A and B must be stacked per event")
        if A.shape[1] != A.shape[2] or B.shape[1] != A.shape[1]:
            raise ValidationError("A must be square and share rows with B")
        object.__setattr__(self, "A", np.ascontiguousarray(A))
        object.__setattr__(self, "B", np.ascontiguousarray(B))

    @property
    def num_events(self) -> int:
        return self.A.shape[0]

    @property
    def n_x(self) -> int:
        return self.A.shape[1]

    @property
    def n_u(self) -> int:
        return self.B.shape[2]


class StageCost:
    """Quadratic stage cost x'Qx + u'Ru with cached symmetric square roots."""

    def __init__(self, Q, R):
        self.Q = np.asarray(Q, dtype=np.float64)
        self.R = np.asarray(R, dtype=np.float64)
        self.sqrt_Q = symmetric_sqrt(self.Q)
        self.sqrt_R = symmetric_sqrt(self.R)

    def value(self, x, u) -> float:
        return float(x @ self.Q @ x + u @ self.R @ u)


class TerminalCost:
    """Quadratic terminal cost x'Qx with cached symmetric square root."""

    def __init__(self, Q):
        self.Q = np.asarray(Q, dtype=np.float64)
        self.sqrt_Q = symmetric_sqrt(self.Q)

    def value(self, x) -> float:
        return float(x @ self.Q @ x)


# -- constraint sets (closed-form projections only) ---------------------------

class Box:
    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=np.float64).ravel()
        self.upper = np.asarray(upper, dtype=np.float64).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValidationError("box bounds must have equal length")
        if np.any(self.lower > self.upper):
            raise ValidationError("box lower bound exceeds upper bound")

    def project(self, v):
        return np.clip(v, self.lower, self.upper)

    def bounds(self, dim):
        if self.lower.size != dim:
            raise ValidationError("box bounds do not match the image dimension")
        return self.lower, self.upper


class BallInf:
    """Sup-norm ball of the given radius (a symmetric box)."""

    def __init__(self, radius):
        if radius < 0:
            raise ValidationError("radius must be nonnegative")
        self.radius = float(radius)

    def project(self, v):
        return np.clip(v, -self.radius, self.radius)

    def bounds(self, dim):
        r = np.full(dim, self.radius)
        return -r, r


class Unconstrained:
    def project(self, v):
        return np.asarray(v, dtype=np.float64)

    def bounds(self, dim):
        inf = np.full(dim, np.inf)
        return -inf, inf


@dataclass(frozen=True)
class StageConstraint:
    """Gx x + Gu u must lie in ``set_`` (rows of Gx/Gu stacked)."""

    Gx: np.ndarray
    Gu: np.ndarray
    set_: object

    @property
    def dim(self) -> int:
        return self.Gx.shape[0]


@dataclass(frozen=True)
class TerminalConstraint:
    GN: np.ndarray
    set_: object

    @property
    def dim(self) -> int:
        return self.GN.shape[0]


def box_stage_constraint(n_x, n_u, x_bound, u_bound) -> StageConstraint:
    """Sup-norm bounds on x and u, realized with identity image matrices."""
    Gx = np.vstack([np.eye(n_x), np.zeros((n_u, n_x))])
    Gu = np.vstack([np.zeros((n_x, n_u)), np.eye(n_u)])
    lo = np.concatenate([-x_bound * np.ones(n_x), -u_bound * np.ones(n_u)])
    return StageConstraint(Gx, Gu, Box(lo, -lo))


def box_terminal_constraint(n_x, x_bound) -> TerminalConstraint:
    r = x_bound * np.ones(n_x)
    return TerminalConstraint(np.eye(n_x), Box(-r, r))


class Raocp:
    """A complete risk-averse optimal control instance on a scenario tree.

    Per-node data is indexed by node id: ``stage_costs[i]`` is the cost
    attached to node i >= 1 (charged to the state/input of its ancestor),
    ``terminal_costs`` is indexed by leaf order (node - num_nonleaf), and
    ``risks``/``stage_constraints`` by nonleaf id.  Instances are treated as
    immutable; share them freely.
    """

    def __init__(self, tree: ScenarioTree, dynamics: Dynamics, stage_costs,
                 terminal_costs, risks, stage_constraints,
                 terminal_constraints, x0):
        self.tree = tree
        self.dynamics = dynamics
        self.stage_costs = list(stage_costs)
        self.terminal_costs = list(terminal_costs)
        self.risks = list(risks)
        self.stage_constraints = list(stage_constraints)
        self.terminal_constraints = list(terminal_constraints)
        self.x0 = np.asarray(x0, dtype=np.float64).ravel()

        problems = validate(self)
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def n_x(self) -> int:
        return self.dynamics.n_x

    @property
    def n_u(self) -> int:
        return self.dynamics.n_u

    def A_of(self, i: int) -> np.ndarray:
        return self.dynamics.A[self.tree.event_of[i] - 1]

    def B_of(self, i: int) -> np.ndarray:
        return self.dynamics.B[self.tree.event_of[i] - 1]

    def with_initial_state(self, x0) -> "Raocp":
        """Copy sharing all per-node data, with a new initial state."""
        new = object.__new__(Raocp)
        new.__dict__.update(self.__dict__)
        new.x0 = np.asarray(x0, dtype=np.float64).ravel()
        if new.x0.shape != self.x0.shape:
            raise ValidationError("initial state has the wrong dimension")
        return new


def validate(p: Raocp) -> list:
    """Structural diagnostics; an empty list means the instance is consistent."""
    out = []
    tree = p.tree
    n_x, n_u = p.n_x, p.n_u

    if p.x0.shape != (n_x,):
        out.append("initial state has the wrong dimension")
    if p.dynamics.num_events < int(tree.event_of.max(initial=1)):
        out.append("tree events exceed the number of dynamics events")

    def check_weight(M, shape, where):
        if M.shape != shape:
            out.append(f"cost shape wrong at {where}")
            return
        scale = max(1.0, float(np.abs(M).max()))
        if np.abs(M - M.T).max() > SYM_TOL * scale:
            out.append(f"cost not symmetric at {where}")
        elif np.linalg.eigvalsh(M).min() < -PSD_TOL * scale:
            out.append(f"cost not PSD at {where}")

    seen = set()
    if len(p.stage_costs) != tree.num_nodes:
        out.append("stage_costs must have one entry per node (entry 0 unused)")
    else:
        for i in range(1, tree.num_nodes):
            c = p.stage_costs[i]
            if id(c) in seen:
                continue
            seen.add(id(c))
            check_weight(c.Q, (n_x, n_x), f"node {i}")
            check_weight(c.R, (n_u, n_u), f"node {i}")
            if c.Q.shape == (n_x, n_x) and np.abs(
                    c.sqrt_Q @ c.sqrt_Q - c.Q).max() > 1e-9 * max(
                    1.0, np.abs(c.Q).max()):
                out.append(f"cost square root inconsistent at node {i}")

    if len(p.terminal_costs) != tree.num_leaf:
        out.append("terminal_costs must have one entry per leaf")
    else:
        for j, c in enumerate(p.terminal_costs):
            if id(c) in seen:
                continue
            seen.add(id(c))
            check_weight(c.Q, (n_x, n_x), f"leaf {j}")

    if len(p.risks) != tree.num_nonleaf:
        out.append("risks must have one entry per nonleaf node")
    else:
        for i, rep in enumerate(p.risks):
            if rep.n != tree.child_count[i]:
                out.append(
                    f"risk at node {i} covers {rep.n} outcomes but the node "
                    f"has {tree.child_count[i]} children")

    if len(p.stage_constraints) != tree.num_nonleaf:
        out.append("stage_constraints must have one entry per nonleaf node")
    else:
        for i, con in enumerate(p.stage_constraints):
            if con.Gx.shape[1] != n_x or con.Gu.shape[1] != n_u:
                out.append(f"constraint image shapes wrong at node {i}")
                break
            if con.Gx.shape[0] != con.Gu.shape[0]:
                out.append(f"constraint row mismatch at node {i}")
                break

    if len(p.terminal_constraints) != tree.num_leaf:
        out.append("terminal_constraints must have one entry per leaf")
    else:
        for j, con in enumerate(p.terminal_constraints):
            if con.GN.shape[1] != n_x:
                out.append(f"terminal constraint shape wrong at leaf {j}")
                break

    return out


def server_dynamics(n_x: int, d: int) -> Dynamics:
    """Tridiagonal heat-exchange dynamics for a rack of n_x servers.

    Event w in [1, d] scales the extra heat each server generates, with
    later servers running hotter; adjacent servers exchange heat through
    the constant 0.01 sub/super diagonal.  Inputs act directly per server.
    """
    A = np.zeros((d, n_x, n_x))
    j = np.arange(1, n_x + 1, dtype=np.float64)
    for w in range(1, d + 1):
        np.fill_diagonal(A[w - 1], 1.0 + ((w - 1.0) / d) * (1.0 + (j - 1.0) / n_x))
        if n_x > 1:
            idx = np.arange(n_x - 1)
            A[w - 1, idx + 1, idx] = 0.01
            A[w - 1, idx, idx + 1] = 0.01
    B = np.broadcast_to(np.eye(n_x), (d, n_x, n_x)).copy()
    return Dynamics(A, B)


def build_server_benchmark(n_x: int, d: int, horizon: int, branch_probs,
                           a: float, initial_state=None) -> Raocp:
    """Server-temperature benchmark instance on an iid tree.

    Unit state weights, input weight 10 I, sup-norm bounds |x| <= 1 and
    |u| <= 1.5, and average value-at-risk at level ``a`` at every nonleaf
    node.  The default initial state is 0.1 * ones.
    """
    tree = build_from_iid(branch_probs, horizon)
    dyn = server_dynamics(n_x, d)
    n_u = n_x

    stage = StageCost(np.eye(n_x), 10.0 * np.eye(n_u))
    term = TerminalCost(np.eye(n_x))
    con = box_stage_constraint(n_x, n_u, 1.0, 1.5)
    tcon = box_terminal_constraint(n_x, 1.0)

    risks = [_risk.build_avar(a, tree.conditional_probabilities(i))
             for i in range(tree.num_nonleaf)]
    x0 = (0.1 * np.ones(n_x)) if initial_state is None else initial_state

    return Raocp(
        tree=tree,
        dynamics=dyn,
        stage_costs=[None] + [stage] * (tree.num_nodes - 1),
        terminal_costs=[term] * tree.num_leaf,
        risks=risks,
        stage_constraints=[con] * tree.num_nonleaf,
        terminal_constraints=[tcon] * tree.num_leaf,
        x0=x0,
    )
