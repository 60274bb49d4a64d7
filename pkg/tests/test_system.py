import numpy as np
import pytest

from tubetlt.errors import ConfigError
from tubetlt.gridset import Grid, GridSet
from tubetlt.system import (
    DisturbanceSource,
    box_region,
    box_vertices,
    integrator_model,
    linear_model,
    robust_one_step_controls,
)

LINE = Grid([-2.5], [2.5], [5])  # unit cells centred on -2..2


def integ1(us, ws, **kw):
    return integrator_model(np.array(us, float).reshape(-1, 1), np.array(ws, float).reshape(-1, 1), **kw)


def test_integrator_step():
    m = integrator_model([[1, 0]], [[0, 0]])
    np.testing.assert_allclose(m.step([0, 0], [1, 0], [0, 0]), [1, 0])
    np.testing.assert_allclose(m.step([0.5, 0.8], [0.5, 0.5], [0.1, 0]), [1.1, 1.3])


def test_vehicle_step_advances_position_by_speed():
    d = 0.2
    m = linear_model([[1, 0, d], [0, 1, 0], [0, 0, 1]], [[0, 0], [d, 0], [0, d]], [[0, 0]], [[0, 0, 0]], d)
    np.testing.assert_allclose(m.step([0, -2.5, 2], [0, 0], [0, 0, 0]), [0.4, -2.5, 2])


def test_batch_step_matches_rowwise():
    m = integ1([-1, 0, 1], [0])
    xs = np.array([[0.0], [1.5], [-2.0]])
    np.testing.assert_allclose(m.step(xs, [1.0], [0.0]), xs + 1)


def test_robust_controls_full_and_empty_targets():
    m = integ1([-1, 0, 1], [-0.1, 0.1])
    assert robust_one_step_controls(m, [0.0], GridSet.full(LINE)).all()
    assert not robust_one_step_controls(m, [0.0], GridSet.empty(LINE)).any()


def test_robust_controls_unit_window():
    # cell 3 covers [0.5, 1.5); only u = 1 keeps both 0.9 and 1.1 inside
    m = integ1([-1, 0, 1], [-0.1, 0.1])
    got = robust_one_step_controls(m, [0.0], GridSet.from_indices(LINE, [3]))
    assert got.tolist() == [False, False, True]


def test_robust_controls_match_enumeration():
    rng = np.random.default_rng(3)
    m = integ1([-1, -0.5, 0, 0.5, 1], [-0.2, 0.0, 0.2])
    for _ in range(200):
        tgt = GridSet(LINE, rng.random(LINE.size) < 0.5)
        x = rng.uniform(-2.5, 2.5, size=1)
        want = []
        for u in m.controls:
            idx = [LINE.cell_index(m.step(x, u, w)) for w in m.disturbances]
            want.append(all(i >= 0 and tgt.mask[i] for i in idx))
        assert robust_one_step_controls(m, x, tgt).tolist() == want


def test_robust_controls_monotone_in_target():
    rng = np.random.default_rng(4)
    m = integ1([-1, 0, 1], [-0.1, 0.1])
    for _ in range(100):
        small = GridSet(LINE, rng.random(LINE.size) < 0.4)
        big = small | GridSet(LINE, rng.random(LINE.size) < 0.4)
        x = rng.uniform(-2.5, 2.5, size=1)
        a = robust_one_step_controls(m, x, small)
        b = robust_one_step_controls(m, x, big)
        assert not (a & ~b).any()


def test_cover_controls_check_whole_disturbance_box():
    # under the cover abstraction the image of x = 0 is [u - 0.1, u + 0.1]
    m = integ1([-1, 0, 1], [-0.1, 0.1], w_region=box_region([-0.1], [0.1]), abstraction="cover")
    got = robust_one_step_controls(m, [0.0], GridSet.from_indices(LINE, [3]))
    assert got.tolist() == [False, False, True]
    # a point near the face: 0.45 + 1 + [-0.1, 0.1] straddles cells 3 and 4
    assert not robust_one_step_controls(m, [0.45], GridSet.from_indices(LINE, [3]))[2]
    assert robust_one_step_controls(m, [0.45], GridSet.from_indices(LINE, [3, 4]))[2]


def test_cover_needs_box_disturbance_region():
    with pytest.raises(ConfigError):
        integ1([0], [0], abstraction="cover")
    with pytest.raises(ConfigError):
        integ1([0], [0], abstraction="hull")


def test_successor_table_marks_exits():
    m = integ1([1], [0])
    tab = m.successor_table(LINE)
    assert tab.shape == (1, 1, 5)
    assert tab[0, 0].tolist() == [1, 2, 3, 4, -1]


def test_digest_separates_models():
    a = integ1([-1, 1], [0])
    b = integ1([-1, 1], [0.5])
    assert a.digest() != b.digest()
    assert a.digest() == integ1([-1, 1], [0]).digest()


def test_disturbance_modes():
    w = box_vertices([-0.1, -0.1], [0.1, 0.1])
    m = integrator_model([[0, 0]], w, w_region=box_region([-0.1, -0.1], [0.1, 0.1]))
    z = DisturbanceSource(m, "zero")
    assert np.all(z() == 0)
    u1 = DisturbanceSource(m, "uniform", seed=7)
    u2 = DisturbanceSource(m, "uniform", seed=7)
    draws = [u1() for _ in range(50)]
    assert all(np.array_equal(a, u2()) for a in draws)
    assert all(np.all(np.abs(d) <= 0.1) for d in draws)
    ex = DisturbanceSource(m, "extreme")
    got = [ex() for _ in range(len(w) + 1)]
    np.testing.assert_allclose(got[-1], got[0])
    rp = DisturbanceSource(m, "replay", replay=[[0.05, 0.0]])
    np.testing.assert_allclose(rp(), [0.05, 0.0])


def test_replay_outside_w_rejected():
    m = integrator_model([[0]], [[-0.1], [0.1]], w_region=box_region([-0.1], [0.1]))
    with pytest.raises(ConfigError):
        DisturbanceSource(m, "replay", replay=[[0.5]])
