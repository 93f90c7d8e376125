import numpy as np
import pytest

from raocp import model, risk, tree


def make_instance(t, n_x, n_u, seed=0, a=0.5, q=1.0, r=1.0, qn=1.0,
                  x_bound=100.0, u_bound=100.0, x0=None, random_dynamics=True):
    """Small instance on an arbitrary tree with closed-form constraint sets."""
    rng = np.random.default_rng(seed)
    d = int(t.event_of.max(initial=1))
    if random_dynamics:
        A = 0.5 * rng.standard_normal((d, n_x, n_x))
        B = rng.standard_normal((d, n_x, n_u))
    else:
        A = np.broadcast_to(np.eye(n_x), (d, n_x, n_x)).copy()
        B = np.broadcast_to(np.eye(n_x)[:, :n_u], (d, n_x, n_u)).copy()
    dyn = model.Dynamics(A, B)
    stage = model.StageCost(q * np.eye(n_x), r * np.eye(n_u))
    term = model.TerminalCost(qn * np.eye(n_x))
    con = model.box_stage_constraint(n_x, n_u, x_bound, u_bound)
    tcon = model.box_terminal_constraint(n_x, x_bound)
    reps = [risk.build_avar(a, t.conditional_probabilities(i))
            for i in range(t.num_nonleaf)]
    if x0 is None:
        x0 = 0.1 * np.ones(n_x)
    return model.Raocp(
        tree=t, dynamics=dyn,
        stage_costs=[None] + [stage] * (t.num_nodes - 1),
        terminal_costs=[term] * t.num_leaf,
        risks=reps,
        stage_constraints=[con] * t.num_nonleaf,
        terminal_constraints=[tcon] * t.num_leaf,
        x0=x0,
    )


@pytest.fixture
def pair_tree():
    """Depth-1 tree with two leaves, the smallest branching fixture."""
    return tree.build_from_iid((0.3, 0.7), 1)


@pytest.fixture
def small_problem():
    """N=2, d=2, n_x=n_u=2 benchmark instance (the cross-agreement fixture)."""
    return model.build_server_benchmark(2, 2, 2, (0.3, 0.7), 0.95)


@pytest.fixture
def unit_fixture(pair_tree):
    """d=2, N=1 scalar instance with unit weights and loose boxes."""
    return make_instance(pair_tree, 1, 1, random_dynamics=False, a=0.95,
                         x0=np.zeros(1))


def random_tree(rng, max_nodes=15):
    """Random small tree via a Markov chain with random pruning."""
    while True:
        d = int(rng.integers(1, 4))
        horizon = int(rng.integers(1, 4))
        T = rng.random((d, d)) * (rng.random((d, d)) < 0.8)
        T[np.arange(d), rng.integers(0, d, d)] += 0.2  # keep rows nonzero
        T /= T.sum(axis=1, keepdims=True)
        p0 = rng.random(d) + 0.05
        p0 /= p0.sum()
        t = tree.build_from_markov(T, p0, horizon)
        if t.num_nodes <= max_nodes:
            return t
