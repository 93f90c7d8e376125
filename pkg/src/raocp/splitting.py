"""Primal/dual vector layouts and the structured linear operator.

The primal-dual point z packs, in this order: the scalar epigraph variable
s0, states x per node, inputs u per nonleaf node, risk duals y per nonleaf
node, then the per-node scalars tau and s for nodes >= 1.  Its image eta
packs one block per nonleaf node (y passthrough, the epigraph scalar
s - b'y, the constraint image), one block per node >= 1 (weighted ancestor
state/input plus the tau epigraph pair) and one block per leaf (terminal
constraint image plus the weighted terminal state and the s epigraph pair).

Everything here is index bookkeeping: a ``Plan`` freezes the offsets and
packs the per-node matrices into stacks of unique values, and the actual
sweeps run in the selected kernel backend.
"""

from __future__ import annotations

import weakref

import numpy as np

from . import risk as _risk
from ._backends import kernels
from .errors import NormEstimationError, ValidationError

_CONE_OP = {_risk.NONNEG: 0, _risk.FREE: 1, _risk.ZERO: 2, _risk.SOC: 3}


class ZLayout:
    """Offsets of the primal vector regions inside one flat array."""

    def __init__(self, num_nodes, n_nonleaf, n_x, n_u, y_dims):
        self.num_nodes = num_nodes
        self.n_nonleaf = n_nonleaf
        self.n_x = n_x
        self.n_u = n_u
        self.y_dims = np.asarray(y_dims, dtype=np.int64)
        self.y_off = np.concatenate(([0], np.cumsum(self.y_dims))).astype(np.int64)
        self.total_y = int(self.y_off[-1])

        self.x0 = 1
        self.u0 = self.x0 + num_nodes * n_x
        self.y0 = self.u0 + n_nonleaf * n_u
        self.t0 = self.y0 + self.total_y
        self.s0_ = self.t0 + (num_nodes - 1)
        self.dim = self.s0_ + (num_nodes - 1)

    def new(self):
        return np.zeros(self.dim)

    # region views into a flat array (no copies)
    def x(self, z):
        return z[self.x0:self.u0].reshape(self.num_nodes, self.n_x)

    def u(self, z):
        return z[self.u0:self.y0].reshape(self.n_nonleaf, self.n_u)

    def y_flat(self, z):
        return z[self.y0:self.t0]

    def y_node(self, z, i):
        a = self.y0 + self.y_off[i]
        return z[a:self.y0 + self.y_off[i + 1]]

    def tau(self, z):
        return z[self.t0:self.s0_]

    def s(self, z):
        return z[self.s0_:self.dim]


class EtaLayout:
    """Offsets of the image vector blocks inside one flat array."""

    def __init__(self, num_nodes, n_nonleaf, n_x, n_u, y_dims, n_c, n_cn):
        self.num_nodes = num_nodes
        self.n_nonleaf = n_nonleaf
        self.n_leaf = num_nodes - n_nonleaf
        self.n_x = n_x
        self.n_u = n_u
        self.n_c = n_c
        self.n_cn = n_cn
        y_dims = np.asarray(y_dims, dtype=np.int64)

        a_dims = y_dims + 1 + n_c
        self.a_off = np.concatenate(([0], np.cumsum(a_dims))).astype(np.int64)
        self.b0 = int(self.a_off[-1])
        self.sb = n_x + n_u + 2
        self.c0 = self.b0 + (num_nodes - 1) * self.sb
        self.sc = n_cn + n_x + 2
        self.dim = self.c0 + self.n_leaf * self.sc
        self.y_dims = y_dims

    def new(self):
        return np.zeros(self.dim)

    def nonleaf_y(self, eta, i):
        a = self.a_off[i]
        return eta[a:a + self.y_dims[i]]

    def nonleaf_scalar(self, eta, i):
        return eta[self.a_off[i] + self.y_dims[i]]

    def nonleaf_constr(self, eta, i):
        a = self.a_off[i] + self.y_dims[i] + 1
        return eta[a:a + self.n_c]

    def node_block(self, eta, i):
        """Block of node i >= 1: (sqrt(Q) x_anc, sqrt(R) u_anc, tau/2, tau/2)."""
        a = self.b0 + (i - 1) * self.sb
        return eta[a:a + self.sb]

    def node_blocks(self, eta):
        return eta[self.b0:self.c0].reshape(self.num_nodes - 1, self.sb)

    def leaf_constr(self, eta, j):
        a = self.c0 + j * self.sc
        return eta[a:a + self.n_cn]

    def leaf_soc(self, eta, j):
        a = self.c0 + j * self.sc + self.n_cn
        return eta[a:a + self.n_x + 2]

    def leaf_blocks(self, eta):
        return eta[self.c0:self.dim].reshape(self.n_leaf, self.sc)


class PrimalDualVector:
    """Named views over one flat primal array."""

    __slots__ = ("layout", "data")

    def __init__(self, layout: ZLayout, data=None):
        self.layout = layout
        if data is None:
            data = layout.new()
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (layout.dim,):
            raise ValidationError("flat primal vector has the wrong length")
        self.data = data

    @property
    def s0(self):
        return self.data[0]

    @s0.setter
    def s0(self, v):
        self.data[0] = v

    @property
    def x(self):
        return self.layout.x(self.data)

    @property
    def u(self):
        return self.layout.u(self.data)

    @property
    def y(self):
        return self.layout.y_flat(self.data)

    def y_node(self, i):
        return self.layout.y_node(self.data, i)

    @property
    def tau(self):
        return self.layout.tau(self.data)

    @property
    def s(self):
        return self.layout.s(self.data)

    def copy(self):
        return PrimalDualVector(self.layout, self.data.copy())

    def flatten(self):
        return self.data.copy()

    @classmethod
    def from_flat(cls, layout, flat):
        return cls(layout, np.array(flat, dtype=np.float64))


class ImageVector:
    """Named views over one flat image array."""

    __slots__ = ("layout", "data")

    def __init__(self, layout: EtaLayout, data=None):
        self.layout = layout
        if data is None:
            data = layout.new()
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (layout.dim,):
            raise ValidationError("flat image vector has the wrong length")
        self.data = data

    def nonleaf_y(self, i):
        return self.layout.nonleaf_y(self.data, i)

    def nonleaf_scalar(self, i):
        return self.layout.nonleaf_scalar(self.data, i)

    def nonleaf_constr(self, i):
        return self.layout.nonleaf_constr(self.data, i)

    def node_block(self, i):
        return self.layout.node_block(self.data, i)

    def leaf_constr(self, j):
        return self.layout.leaf_constr(self.data, j)

    def leaf_soc(self, j):
        return self.layout.leaf_soc(self.data, j)

    def copy(self):
        return ImageVector(self.layout, self.data.copy())

    def flatten(self):
        return self.data.copy()

    @classmethod
    def from_flat(cls, layout, flat):
        return cls(layout, np.array(flat, dtype=np.float64))


def _pack_unique(objs):
    """Map each object to a slot in a list of unique objects (by identity)."""
    ids = np.empty(len(objs), dtype=np.int64)
    slots = {}
    uniq = []
    for k, obj in enumerate(objs):
        handle = id(obj)
        if handle not in slots:
            slots[handle] = len(uniq)
            uniq.append(obj)
        ids[k] = slots[handle]
    return uniq, ids


def _groups(ids, count):
    return [np.nonzero(ids == k)[0].astype(np.int64) for k in range(count)]


class Plan:
    """Frozen geometry and packed data of one problem instance.

    Per-node matrices are deduplicated (by object identity) into stacks; an
    id array maps each node to its stack slot, and the numpy backend also
    gets the inverse grouping so it can batch one matrix product per unique
    value.
    """

    def __init__(self, p):
        tree = p.tree
        self.tree = tree
        self.n_x = p.n_x
        self.n_u = p.n_u
        self.num_nodes = tree.num_nodes
        self.n_nonleaf = tree.num_nonleaf
        self.n_leaf = tree.num_leaf
        self.horizon = tree.horizon

        self.anc = tree.ancestor_of
        self.child_start = tree.child_start
        self.child_count = tree.child_count
        self.stage_ptr = tree.stage_ptr

        # -- constraint image dims must be uniform per kind
        n_cs = {c.dim for c in p.stage_constraints}
        n_cns = {c.dim for c in p.terminal_constraints}
        if len(n_cs) != 1 or len(n_cns) != 1:
            raise ValidationError(
                "constraint image dimensions must be uniform across nodes")
        self.n_c = n_cs.pop()
        self.n_cn = n_cns.pop()

        y_dims = [p.risks[i].cone.dim for i in range(self.n_nonleaf)]
        self.zlay = ZLayout(self.num_nodes, self.n_nonleaf, self.n_x, self.n_u,
                            y_dims)
        self.elay = EtaLayout(self.num_nodes, self.n_nonleaf, self.n_x,
                              self.n_u, y_dims, self.n_c, self.n_cn)
        self.y_dims = self.zlay.y_dims
        self.y_off = self.zlay.y_off

        # -- dynamics and cost stacks (dynamics are shared per event)
        self.A_stack = p.dynamics.A
        self.B_stack = p.dynamics.B
        ev = tree.event_of.copy()
        ev[0] = 1
        self.A_id = (ev - 1).astype(np.int64)
        self.B_id = self.A_id

        costs, cost_id = _pack_unique(
            [p.stage_costs[i] for i in range(1, self.num_nodes)])
        self.sqQ_stack = np.ascontiguousarray(np.stack([c.sqrt_Q for c in costs]))
        self.sqR_stack = np.ascontiguousarray(np.stack([c.sqrt_R for c in costs]))
        self.sqQ_id = np.concatenate(([0], cost_id)).astype(np.int64)
        self.sqR_id = self.sqQ_id

        tcosts, tcost_id = _pack_unique(p.terminal_costs)
        self.sqQN_stack = np.ascontiguousarray(
            np.stack([c.sqrt_Q for c in tcosts]))
        self.sqQN_id = tcost_id

        scons, g_id = _pack_unique(p.stage_constraints)
        self.Gx_stack = np.ascontiguousarray(np.stack([c.Gx for c in scons]))
        self.Gu_stack = np.ascontiguousarray(np.stack([c.Gu for c in scons]))
        self.G_id = g_id

        tcons, gn_id = _pack_unique(p.terminal_constraints)
        self.GN_stack = np.ascontiguousarray(np.stack([c.GN for c in tcons]))
        self.GN_id = gn_id

        # -- risk data: b vectors aligned with the y region, dual-cone ops
        self.b_flat = np.zeros(self.zlay.total_y)
        for i in range(self.n_nonleaf):
            self.b_flat[self.y_off[i]:self.y_off[i + 1]] = p.risks[i].b

        reps, cone_id = _pack_unique(p.risks)
        cones = [r.cone for r in reps]
        self.cone_id = cone_id
        kinds, sizes, off = [], [], [0]
        for cone in cones:
            for kind, dim in cone.dual().blocks:
                kinds.append(_CONE_OP[kind])
                sizes.append(dim)
            off.append(len(kinds))
        self.cone_kinds = np.asarray(kinds, dtype=np.int64)
        self.cone_sizes = np.asarray(sizes, dtype=np.int64)
        self.cone_off = np.asarray(off, dtype=np.int64)

        # -- constraint bounds (boxes; unconstrained becomes +-inf)
        self.con_id = g_id
        self.clo_stack = np.stack([c.set_.bounds(self.n_c)[0] for c in scons])
        self.chi_stack = np.stack([c.set_.bounds(self.n_c)[1] for c in scons])
        self.tcon_id = gn_id
        self.tlo_stack = np.stack([c.set_.bounds(self.n_cn)[0] for c in tcons])
        self.thi_stack = np.stack([c.set_.bounds(self.n_cn)[1] for c in tcons])

        # -- index arrays for the scatter/gather parts of L
        elay = self.elay
        self.ay_idx = np.concatenate([
            np.arange(elay.a_off[i], elay.a_off[i] + self.y_dims[i])
            for i in range(self.n_nonleaf)
        ]).astype(np.int64) if self.n_nonleaf else np.zeros(0, np.int64)
        self.e_idx = (elay.a_off[:-1] + self.y_dims).astype(np.int64)
        self.c_start = (self.e_idx + 1).astype(np.int64)
        self.c_idx2d = self.c_start[:, None] + np.arange(self.n_c)[None, :]
        # z sources of the nonleaf epigraph scalars: s0 for the root, the
        # stored s of the node itself otherwise
        s_src = np.empty(self.n_nonleaf, dtype=np.int64)
        s_src[0] = 0
        if self.n_nonleaf > 1:
            s_src[1:] = self.zlay.s0_ + np.arange(1, self.n_nonleaf) - 1
        self.s_src = s_src

        # -- groupings for batched numpy paths
        self.A_groups = _groups(self.A_id[1:], self.A_stack.shape[0])
        self.sqQ_groups = _groups(self.sqQ_id[1:], self.sqQ_stack.shape[0])
        self.sqR_groups = _groups(self.sqR_id[1:], self.sqR_stack.shape[0])
        self.sqQN_groups = _groups(self.sqQN_id, self.sqQN_stack.shape[0])
        self.G_groups = _groups(self.G_id, self.Gx_stack.shape[0])
        self.GN_groups = _groups(self.GN_id, self.GN_stack.shape[0])
        self.con_groups = self.G_groups
        self.tcon_groups = self.GN_groups
        self.cone_groups = _groups(self.cone_id, len(cones))
        # eta positions of each cone group's y parts, one 2D index per group
        self.cone_y_idx = [
            elay.a_off[rows][:, None] + np.arange(cones[k].dim)[None, :]
            for k, rows in enumerate(self.cone_groups)
        ]
        # per-stage grouping of nodes by dynamics event, stages 1..N
        self.stage_dyn_groups = []
        for t in range(1, self.horizon + 1):
            a, b = int(self.stage_ptr[t]), int(self.stage_ptr[t + 1])
            ids = self.A_id[a:b]
            self.stage_dyn_groups.append(
                [a + np.nonzero(ids == k)[0].astype(np.int64)
                 for k in range(self.A_stack.shape[0])])

        self.backend = kernels.select()

    # -- flat-array operator entry points used by the solvers ---------------

    def L(self, z, out=None):
        if out is None:
            out = self.elay.new()
        self.backend.apply_L(self, z, out)
        return out

    def L_adj(self, eta, out=None):
        if out is None:
            out = self.zlay.new()
        self.backend.apply_L_adjoint(self, eta, out)
        return out


_plan_cache = weakref.WeakKeyDictionary()


def get_plan(p) -> Plan:
    """Plan of ``p``, built once per instance and cached."""
    plan = _plan_cache.get(p)
    if plan is None:
        plan = Plan(p)
        _plan_cache[p] = plan
    return plan


def share_plan(p, other):
    """Register ``other`` (same data, e.g. new initial state) to reuse p's plan."""
    _plan_cache[other] = get_plan(p)


def apply_L(p, z: PrimalDualVector) -> ImageVector:
    """Image eta = L z of the primal-dual point."""
    plan = get_plan(p)
    if z.layout.dim != plan.zlay.dim:
        raise ValidationError("primal vector does not match the problem")
    return ImageVector(plan.elay, plan.L(z.data))


def apply_L_adjoint(p, eta: ImageVector) -> PrimalDualVector:
    """Adjoint image z = L* eta, satisfying <Lz, eta> = <z, L* eta>."""
    plan = get_plan(p)
    if eta.layout.dim != plan.elay.dim:
        raise ValidationError("image vector does not match the problem")
    return PrimalDualVector(plan.zlay, plan.L_adj(eta.data))


def estimate_operator_norm(p, tol: float = 1e-10, max_iters: int = 10_000,
                           seed: int = 0) -> float:
    """Power-iteration estimate of ||L||.

    Iterates z <- L*(L z) from a seeded start until the Rayleigh quotient's
    relative change drops below ``tol``.  The returned value carries no
    safety margin; ``default_alpha`` adds one before deriving a step size.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    plan = get_plan(p)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(plan.zlay.dim)
    z /= np.linalg.norm(z)
    eta = plan.elay.new()
    w = plan.zlay.new()
    lam_prev = 0.0
    for _ in range(max_iters):
        plan.backend.apply_L(plan, z, eta)
        lam = float(eta @ eta)  # ||Lz||^2 for unit z
        plan.backend.apply_L_adjoint(plan, eta, w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        z = w / nw
        if abs(lam - lam_prev) <= tol * max(lam, 1e-300):
            return float(np.sqrt(lam))
        lam_prev = lam
    raise NormEstimationError(
        f"power iteration did not converge within {max_iters} iterations")


NORM_SAFETY = 1.01


def default_alpha(p, tol: float = 1e-10) -> float:
    """Step size 0.99 / (1.01 * ||L||), keeping alpha * ||L|| < 1."""
    return 0.99 / (NORM_SAFETY * estimate_operator_norm(p, tol=tol))
