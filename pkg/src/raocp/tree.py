"""Scenario-tree topology and probability bookkeeping.

Node ids are dense integers assigned level by level: every node of stage t
precedes every node of stage t+1, node 0 is the root, and the children of
consecutive parents occupy consecutive id ranges.  All per-node data in the
rest of the package lives in flat arrays indexed by these ids, so a stage is
always one contiguous slice.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

PROB_TOL = 1e-12


class ScenarioTree:
    """Immutable level-order indexed scenario tree.

    Parameters
    ----------
    stage_of : int array, stage index of each node, in [0, horizon].
    ancestor_of : int array, parent id of each node (-1 for the root).
    child_start, child_count : int arrays describing each node's children as
        the contiguous range [child_start, child_start + child_count).
    probability_of : float array of unconditional node probabilities.
    event_of : int array, realized event w in [1, d] at each node (>= stage 1);
        0 at the root.
    horizon : number of stages N >= 1.
    """

    def __init__(self, stage_of, ancestor_of, child_start, child_count,
                 probability_of, event_of, horizon):
        self.stage_of = np.ascontiguousarray(stage_of, dtype=np.int64)
        self.ancestor_of = np.ascontiguousarray(ancestor_of, dtype=np.int64)
        self.child_start = np.ascontiguousarray(child_start, dtype=np.int64)
        self.child_count = np.ascontiguousarray(child_count, dtype=np.int64)
        self.probability_of = np.ascontiguousarray(probability_of, dtype=np.float64)
        self.event_of = np.ascontiguousarray(event_of, dtype=np.int64)
        self.horizon = int(horizon)
        self.num_nodes = self.stage_of.shape[0]

        # stage_ptr[t] .. stage_ptr[t+1] is the id range of stage t
        counts = np.bincount(self.stage_of, minlength=self.horizon + 1)
        self.stage_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

        self._check()
        for arr in (self.stage_of, self.ancestor_of, self.child_start,
                    self.child_count, self.probability_of, self.event_of,
                    self.stage_ptr):
            arr.flags.writeable = False

    # -- queries ------------------------------------------------------------

    @property
    def num_nonleaf(self) -> int:
        """Nodes of stages 0 .. N-1 (they occupy ids [0, num_nonleaf))."""
        return int(self.stage_ptr[self.horizon])

    @property
    def num_leaf(self) -> int:
        return self.num_nodes - self.num_nonleaf

    def children_of(self, i: int) -> np.ndarray:
        s = self.child_start[i]
        return np.arange(s, s + self.child_count[i])

    def stage_range(self, t: int) -> tuple[int, int]:
        return int(self.stage_ptr[t]), int(self.stage_ptr[t + 1])

    def nodes_at_stage(self, t: int) -> range:
        a, b = self.stage_range(t)
        return range(a, b)

    def is_leaf(self, i: int) -> bool:
        return self.stage_of[i] == self.horizon

    def conditional_probabilities(self, i: int) -> np.ndarray:
        """Probabilities of the children of i, conditioned on reaching i."""
        ch = self.children_of(i)
        return self.probability_of[ch] / self.probability_of[i]

    def __repr__(self):
        return (f"ScenarioTree(num_nodes={self.num_nodes}, "
                f"horizon={self.horizon})")

    # -- validation ---------------------------------------------------------

    def _check(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if np.any(np.diff(self.stage_of) < 0):
            raise ValidationError("node ids are not in level order")
        if abs(self.probability_of[0] - 1.0) > PROB_TOL:
            raise ValidationError("root probability must be 1")
        for t in range(self.horizon + 1):
            a, b = self.stage_range(t)
            if b <= a:
                raise ValidationError(f"stage {t} is empty")
            if abs(self.probability_of[a:b].sum() - 1.0) > 1e-9:
                raise ValidationError(f"stage {t} probabilities do not sum to 1")
        for i in range(self.num_nodes):
            leaf = self.stage_of[i] == self.horizon
            cnt = self.child_count[i]
            if leaf and cnt != 0:
                raise ValidationError(f"leaf {i} has children")
            if not leaf:
                if cnt < 1:
                    raise ValidationError(f"nonleaf {i} has no children")
                ch = self.children_of(i)
                if np.any(self.ancestor_of[ch] != i):
                    raise ValidationError(f"children of {i} disagree on ancestor")
                psum = self.probability_of[ch].sum()
                if abs(psum - self.probability_of[i]) > 1e-9:
                    raise ValidationError(
                        f"child probabilities of {i} do not sum to the parent's")


def _grow(horizon, first_events, first_probs, branch):
    """Shared breadth-first construction.

    ``first_events``/``first_probs`` describe the surviving stage-1 branches;
    ``branch(w)`` returns (events, conditional probs) for a node of event w.
    """
    stage_of = [0]
    anc = [-1]
    prob = [1.0]
    event = [0]
    child_start = []
    child_count = []

    frontier = [0]
    for t in range(horizon):
        next_frontier = []
        for i in frontier:
            if t == 0:
                evs, cps = first_events, first_probs
            else:
                evs, cps = branch(event[i])
            child_start.append(len(stage_of))
            child_count.append(len(evs))
            for w, cp in zip(evs, cps):
                next_frontier.append(len(stage_of))
                stage_of.append(t + 1)
                anc.append(i)
                prob.append(prob[i] * cp)
                event.append(w)
        frontier = next_frontier
    child_start.extend([len(stage_of)] * len(frontier))
    child_count.extend([0] * len(frontier))

    return ScenarioTree(stage_of, anc, child_start, child_count, prob, event,
                        horizon)


def build_from_iid(branch_probs, horizon: int) -> ScenarioTree:
    """Full d-ary tree for an iid disturbance with the given branch distribution.

    Every nonleaf node gets one child per event w in [1, d], with
    probability prob(parent) * branch_probs[w-1].
    """
    bp = np.asarray(branch_probs, dtype=np.float64).ravel()
    if bp.size < 1:
        raise ValidationError("branch_probs must be nonempty")
    if np.any(bp <= 0):
        raise ValidationError("branch probabilities must be positive")
    if abs(bp.sum() - 1.0) > PROB_TOL:
        raise ValidationError("branch probabilities must sum to 1")
    if int(horizon) < 1:
        raise ValidationError("horizon must be >= 1")

    events = list(range(1, bp.size + 1))
    probs = list(bp)
    return _grow(int(horizon), events, probs, lambda w: (events, probs))


def build_from_markov(transition_matrix, initial_probs, horizon: int) -> ScenarioTree:
    """Tree of a finite Markov chain; zero-probability branches are pruned.

    Stage-1 nodes carry the events with positive ``initial_probs``; a node
    with event w branches on the positive entries of row w of
    ``transition_matrix``.
    """
    T = np.asarray(transition_matrix, dtype=np.float64)
    p0 = np.asarray(initial_probs, dtype=np.float64).ravel()
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValidationError("transition matrix must be square")
    if T.shape[0] != p0.size:
        raise ValidationError("initial_probs length must match the matrix")
    if np.any(T < 0) or np.any(p0 < 0):
        raise ValidationError("probabilities must be nonnegative")
    if np.any(np.abs(T.sum(axis=1) - 1.0) > PROB_TOL):
        raise ValidationError("transition matrix rows must sum to 1")
    if abs(p0.sum() - 1.0) > PROB_TOL:
        raise ValidationError("initial_probs must sum to 1")
    if int(horizon) < 1:
        raise ValidationError("horizon must be >= 1")

    def positive(vec):
        idx = np.nonzero(vec > 0)[0]
        return [int(k) + 1 for k in idx], [float(vec[k]) for k in idx]

    rows = {w + 1: positive(T[w]) for w in range(T.shape[0])}
    first_events, first_probs = positive(p0)
    return _grow(int(horizon), first_events, first_probs, lambda w: rows[w])
