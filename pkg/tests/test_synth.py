import itertools

import numpy as np
import pytest

from tubetlt import formula as F
from tubetlt.gridset import Grid
from tubetlt.predicates import ball, box
from tubetlt.system import DisturbanceSource, box_region, box_vertices, integrator_model
from tubetlt.synth import (
    activate,
    backtrack_control,
    build_control_tree,
    choose_control,
    initialize,
    post_set,
    run_online,
    tracking_set_node,
    update_ttlt,
)
from tubetlt.ttlt import compress, construct

from helpers import PREDS_1D

LINE = Grid([-10.5], [9.5], [20])
M1 = integrator_model(np.array([[-1.0], [0.0], [1.0]]), np.zeros((1, 1)))


def tree(text, model=M1, grid=LINE):
    return construct(F.parse(text, PREDS_1D), model, grid, PREDS_1D)


# -- control choice ---------------------------------------------------------


def test_choose_least_norm():
    u = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert choose_control(u, np.array([True, True])) == 1


def test_choose_lexicographic_on_norm_tie():
    u = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert choose_control(u, np.array([True, True])) == 1


def test_choose_singleton_and_empty():
    u = np.array([[3.0, 4.0]])
    assert choose_control(u, np.array([True])) == 0
    with pytest.raises(ValueError):
        choose_control(u, np.array([False]))


# -- bookkeeping ------------------------------------------------------------


def test_single_node_initialization():
    t = tree("q")
    s = initialize(t)
    assert s.t_a == {0: 0}
    assert s.t_h[0] == np.inf or s.t_h[0] == 0
    assert s.post == {0}


def test_outside_every_set_gives_empty_tracking():
    t = tree("p U[0,3] q")
    s = initialize(t)
    assert tracking_set_node(s, [-10.0]) == []
    sets = build_control_tree(s, [], update_ttlt(s, []), [-10.0])
    assert not any(v.any() for v in sets.values())


def test_tracking_drops_parent_when_child_also_valid():
    # x = 2 lies in the until tube and already in its target leaf
    t = tree("p U[0,3] q")
    s = initialize(t)
    s.post = {0, 2}
    assert tracking_set_node(s, [2.0]) == [2]


def test_boolean_root_is_frozen_after_first_step():
    t = tree("(p U[0,3] q) & G[0,2] r")
    s = initialize(t)
    B = tracking_set_node(s, [0.0])
    activate(s, B)
    rel = update_ttlt(s, B)
    assert rel[0] == 0  # span 0: the root never advances
    assert all(rel[i] == 1 for i in B if t.op_of(i) is not None and not t.op_of(i).is_boolean)


def test_always_child_waits_for_window_end():
    t = tree("G[0,3] p")
    s = initialize(t)
    B = tracking_set_node(s, [1.0])
    activate(s, B)
    assert post_set(s, B) == {0}
    s.k = 2
    assert post_set(s, B) == {0, 2}


def test_until_child_predicted_once_lower_end_passed():
    t = tree("p U[2,4] q")
    s = initialize(t)
    B = tracking_set_node(s, [0.0])
    activate(s, B)
    assert post_set(s, B) == {0}
    s.k = 1
    assert post_set(s, B) == {0, 2}


def test_control_sets_match_per_control_simulation():
    t = tree("p U[0,4] q")
    s = initialize(t)
    for x in np.arange(-4.0, 5.0):
        B = tracking_set_node(s, [x])
        rel = update_ttlt(s, B)
        sets = build_control_tree(s, B, rel, [x])
        for i in B:
            node = t.nodes[i]
            if node.is_leaf:
                assert sets[i].all()
                continue
            nxt = node.tube.at(rel[i])
            want = [nxt.contains([x + u[0]]) for u in M1.controls]
            assert sets[i].tolist() == want


def test_backtrack_root_only_and_disjoint_or():
    t = tree("q")
    ct = compress(t)
    v = np.array([True, False, True])
    assert backtrack_control(ct, {0: v}, 3).tolist() == v.tolist()
    t = tree("(p U[0,2] q) | (r U[0,2] q)")
    ct = compress(t)
    a, b = t.op_of(0).children
    sets = {i: np.zeros(3, bool) for i in range(len(t))}
    sets[a] = np.array([True, False, False])
    sets[b] = np.array([False, False, True])
    assert backtrack_control(ct, sets, 3).tolist() == [True, False, True]


# -- closed loop ------------------------------------------------------------


def test_x0_outside_root_is_nexis_at_zero():
    t = tree("p U[0,3] q")
    res = run_online(t, [-10.0], DisturbanceSource(M1, "zero"))
    assert res.verdict == "NExis" and res.nexis_step == 0


def exhaustive_satisfiable(f, x0, steps):
    for us in itertools.product((-1.0, 0.0, 1.0), repeat=steps):
        xs = x0 + np.concatenate([[0.0], np.cumsum(us)])
        if F.evaluate(f, F.Signal(xs.reshape(-1, 1), 1.0), 0, PREDS_1D):
            return True
    return False


@pytest.mark.parametrize("x0", [-3.0, -1.0, 0.0, 2.0])
def test_deterministic_reach_task_completes(x0):
    f = F.parse("p U[0,5] q")
    assert exhaustive_satisfiable(f, x0, 5) == (x0 >= 0)
    t = construct(f, M1, LINE, PREDS_1D)
    res = run_online(t, [x0], DisturbanceSource(M1, "zero"), extend=True)
    if x0 >= 0:  # p must hold before the witness
        assert res.verdict == "completed"
        assert F.evaluate(f, res.signal, 0, PREDS_1D)
    else:
        assert res.verdict == "NExis"


def test_disturbed_runs_are_sound_whenever_they_finish():
    g = Grid([-6, -6], [6, 6], [48, 48])
    w = box_vertices([-0.1, -0.1], [0.1, 0.1])
    us = np.array([[i, j] for i in (-0.5, 0, 0.5) for j in (-0.5, 0, 0.5)])
    m = integrator_model(us, w, w_region=box_region([-0.1, -0.1], [0.1, 0.1]), abstraction="cover")
    # reach c along the band b while avoiding the obstacle a
    preds = {"a": ball("a", [0, 1.5], 1.0), "b": box("b", [-6, -1], [6, 1]), "c": ball("c", [-3, 0], 1.0)}
    f = F.parse("(b U[0,14] c) & G[0,14] !a", preds)
    # inner rasterization makes every point of a leaf cell satisfy the leaf
    t = construct(f, m, g, preds, raster="inner")
    x0 = np.array([1.0, -0.5])
    assert t.nodes[0].tube.at(0).contains(x0)
    done = 0
    for seed in range(10):
        res = run_online(t, x0, DisturbanceSource(m, "uniform", seed=seed), extend=True)
        if res.verdict == "completed":
            done += 1
            assert F.evaluate(f, res.signal, 0, preds)
    assert done > 0
