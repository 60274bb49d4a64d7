"""Online control synthesis over an instantiated tube tree.

Each tube node ``i`` carries a current slice index ``rel[i]`` so that its
set node is ``S_i(t_k) = X_i(rel[i])``.  One iteration at step ``k``:

1. ``B`` = nodes containing ``x_k`` (within their horizon) that were
   predicted by ``Post`` at the previous step, with any node dropped whose
   grandchild is also in ``B``;
2. unassigned activation times of members of ``B`` are set to ``k``;
3. active members advance one slice;
4. a control set is attached to every node (robust one-step controls into
   its next slice, all controls for leaves, nothing outside ``B``), fragments
   are merged by union and the Boolean skeleton is folded bottom-up;
5. a control is chosen, the system is stepped and ``Post(B)`` is predicted.

Leaves once entered stay satisfied: they keep contributing every control so
that finished branches of a conjunction do not block the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import formula as F
from .system import DisturbanceSource, SystemModel, robust_one_step_controls
from .ttlt import CompressedTree, Ttlt, TubeNode, backtrack, compress, tree_satisfies


@dataclass
class SynthState:
    tree: Ttlt
    k: int
    t_a: dict  # tube id -> activation step or None
    t_h: dict  # tube id -> deactivation step (math.inf for leaves)
    rel: dict  # tube id -> current slice index
    post: set  # node ids predicted valid at step k
    B: list = field(default_factory=list)
    done: set = field(default_factory=set)  # leaves already reached

    def slice(self, tid: int):
        return self.tree.nodes[tid].tube.at(self.rel[tid])


def _span(tree: Ttlt, tid: int) -> int:
    op = tree.op_of(tid)
    return 0 if op is None else op.span


def initialize(tree: Ttlt, k0: int = 0) -> SynthState:
    t_a: dict = {}
    t_h: dict = {}
    order = [tree.root]
    while order:
        tid = order.pop(0)
        node = tree.nodes[tid]
        if tid == tree.root:
            t_a[tid] = k0
            t_h[tid] = k0 + _span(tree, tid)
        elif node.is_leaf:
            t_a[tid] = None
            t_h[tid] = math.inf
        else:
            t_a[tid] = None
            t_h[tid] = t_h[tree.pre(tid)] + _span(tree, tid)
        order.extend(tree.children_of(tid))
    post = {tree.root}
    for j in tree.boolean_closure(tree.root):
        post.add(j)
        t_a[j] = k0
    rel = {n.id: 0 for n in tree.tube_nodes()}
    return SynthState(tree, k0, t_a, t_h, rel, post)


def labels(state: SynthState, x) -> list[int]:
    """Tube nodes whose current set contains ``x`` within their horizon."""
    out = []
    for n in state.tree.tube_nodes():
        if state.k <= state.t_h[n.id] and state.slice(n.id).contains(x):
            out.append(n.id)
    return out


def tracking_set_node(state: SynthState, x) -> list[int]:
    tree = state.tree
    cand = [i for i in labels(state, x) if i in state.post]
    snapshot = set(cand)
    # grandchildren are the operator's children
    return [i for i in cand if not any(j in snapshot for j in tree.children_of(i))]


def activate(state: SynthState, B) -> None:
    for i in B:
        if state.t_a[i] is None:
            state.t_a[i] = state.k


def update_ttlt(state: SynthState, B) -> dict:
    """Slice indices at step ``k + 1``."""
    nxt = dict(state.rel)
    for i in B:
        ta = state.t_a[i]
        if ta is not None and ta + _span(state.tree, i) >= state.k + 1:
            nxt[i] = state.k + 1 - ta
    return nxt


def build_control_tree(state: SynthState, B, rel_next: dict, x) -> dict:
    """Control mask per tube node (over ``model.controls``)."""
    tree = state.tree
    model = tree.model
    full = np.ones(model.n_controls, dtype=bool)
    out = {}
    members = set(B) | state.done
    for n in tree.tube_nodes():
        if n.id not in members:
            out[n.id] = np.zeros(model.n_controls, dtype=bool)
        elif n.is_leaf:
            out[n.id] = full.copy()
        else:
            target = n.tube.at(rel_next[n.id])
            out[n.id] = robust_one_step_controls(model, x, target)
    return out


def backtrack_control(ct: CompressedTree, node_sets: dict, n_controls: int) -> np.ndarray:
    values = {}
    for c in ct.nodes:
        if c.kind == "set":
            acc = np.zeros(n_controls, dtype=bool)
            for m in c.members:
                acc |= node_sets[m]
            values[c.id] = acc
    empty = np.zeros(n_controls, dtype=bool)
    return backtrack(ct, values, lambda a, b: a & b, lambda a, b: a | b, empty)


def post_set(state: SynthState, B) -> set:
    """Nodes possibly valid at step ``k + 1``."""
    tree = state.tree
    nxt = state.k + 1
    post: set = set()
    for i in B:
        post.add(i)
        op = tree.op_of(i)
        if op is None:
            continue
        if op.is_boolean:
            post.update(tree.boolean_closure(i))
            continue
        a, b = op.interval
        ta = state.t_a[i]
        due = a if op.kind == "until" else b
        if ta is not None and nxt >= ta + due:
            for c in op.children:
                post.add(c)
                post.update(tree.boolean_closure(c))
    return post


def choose_control(controls: np.ndarray, feasible: np.ndarray) -> int:
    """Index of the feasible control of least norm, ties broken lexicographically."""
    idx = np.flatnonzero(feasible)
    if idx.size == 0:
        raise ValueError("empty feasible control set")
    cand = controls[idx]
    norms = np.round(np.linalg.norm(cand, axis=1), 12)
    # lexsort treats the last key as primary
    keys = [cand[:, d] for d in range(cand.shape[1] - 1, -1, -1)] + [norms]
    return int(idx[np.lexsort(keys)[0]])


@dataclass
class RunResult:
    verdict: str  # "completed" | "NExis" | "max_steps"
    states: np.ndarray
    controls: np.ndarray
    disturbances: np.ndarray
    feasible_counts: list
    tracking: list  # B per step
    activation: dict
    nexis_step: Optional[int] = None
    nexis_nodes: Optional[list] = None
    satisfied: bool = False
    codings: dict = field(default_factory=dict)
    period: float = 1.0

    @property
    def signal(self) -> F.Signal:
        return F.Signal(self.states, self.period)


def run_online(
    tree: Ttlt,
    x0,
    disturbance: DisturbanceSource,
    max_steps: int | None = None,
    slack: int = 5,
    extend: bool = False,
) -> RunResult:
    """Closed loop from ``x0`` until the tree certifies the trajectory
    ("completed"), the feasible set empties ("NExis") or ``max_steps``.

    With ``extend`` a completed run keeps stepping up to the formula horizon
    so the whole trajectory can be monitored; once certified, an empty
    feasible set falls back to every control.
    """
    model: SystemModel = tree.model
    ct = compress(tree)
    horizon = F.horizon_steps(tree.formula, tree.period)
    if max_steps is None:
        max_steps = horizon + slack
    state = initialize(tree)
    x = np.asarray(x0, dtype=float)
    xs = [x]
    us: list = []
    ws: list = []
    counts: list = []
    tracks: list = []
    verdict = "max_steps"
    nexis = None
    nexis_nodes = None
    satisfied = False
    codings: dict = {}
    for _ in range(max_steps + 1):
        B = tracking_set_node(state, x)
        tracks.append(list(B))
        activate(state, B)
        new_leaves = [i for i in B if tree.nodes[i].is_leaf and i not in state.done]
        state.done.update(new_leaves)
        if new_leaves and not satisfied:
            sig = F.Signal(np.array(xs), tree.period)
            satisfied, codings = tree_satisfies(sig, tree, witness=True)
            if satisfied:
                verdict = "completed"
                if not extend or state.k >= horizon:
                    counts.append(None)
                    break
        rel_next = update_ttlt(state, B)
        sets = build_control_tree(state, B, rel_next, x)
        feasible = backtrack_control(ct, sets, model.n_controls)
        counts.append(int(feasible.sum()))
        if not feasible.any():
            if not satisfied:
                verdict = "NExis"
                nexis = state.k
                nexis_nodes = list(B)
                break
            feasible = np.ones(model.n_controls, dtype=bool)
        if state.k >= (horizon if satisfied else max_steps):
            break
        i = choose_control(model.controls, feasible)
        u = model.controls[i]
        w = disturbance()
        post = post_set(state, B)
        x = model.step(x, u, w)
        xs.append(x)
        us.append(u)
        ws.append(w)
        state.rel = rel_next
        state.post = post
        state.B = B
        state.k += 1
    return RunResult(
        verdict,
        np.array(xs),
        np.array(us).reshape(len(us), model.controls.shape[1]),
        np.array(ws).reshape(len(ws), model.disturbances.shape[1]),
        counts,
        tracks,
        dict(state.t_a),
        nexis,
        nexis_nodes,
        satisfied,
        codings,
        tree.period,
    )
