"""Scenario constants and post-capture state construction."""

import numpy as np
import pytest

from funnelsim.errors import ConfigError
from funnelsim.scenarios import (DETUMBLE_GRASP_Q, OMEGA0, Scenario,
                                 detumble_scenario, freeflyer_scenario,
                                 initial_state_grid, load_scenario,
                                 post_capture_state, rigid_rotation_state)


def test_detumble_constants():
    sc = detumble_scenario()
    m = sc.model
    assert m.base_mass == 100.0
    assert [lk.mass for lk in m.links] == [10.0, 8.0, 4.0]
    assert [lk.length for lk in m.links] == [0.9, 0.7, 0.3]
    assert m.payload.mass == 50.0
    assert np.array_equal(sc.bounds.u_max,
                          np.array([10.0, 10.0, 50.0, 50.0, 50.0, 50.0]))
    assert np.array_equal(sc.bounds.u_min, -sc.bounds.u_max)
    assert OMEGA0 == np.deg2rad(5.0)
    assert abs(OMEGA0 - 0.0873) < 5e-5
    assert sc.estimation.n_sims == 1000
    assert sc.estimation.m_knots == 100
    assert sc.n_intervals == 100
    # goal: every velocity pinned to zero, every pose left free
    assert np.all(np.isnan(sc.bounds.xf[:6]))
    assert np.array_equal(sc.bounds.xf[6:], np.zeros(6))


def test_freeflyer_constants():
    sc = freeflyer_scenario()
    assert sc.model.base_mass == 4.26
    assert sc.model.base_inertia == 0.064
    assert sc.n_intervals == 100
    wp = sc.bounds.waypoints
    assert set(wp) == {30, 50, 70}
    assert np.array_equal(wp[50][:3], np.array([4.0, 2.0, np.pi]))
    assert np.array_equal(wp[30][:3], np.array([3.0, 1.0, np.pi / 2.0]))
    assert np.array_equal(wp[70][:3], np.array([3.0, 3.0, 3.0 * np.pi / 2.0]))
    assert np.all(np.isnan(wp[50][3:]))  # only the pose is pinned
    assert np.array_equal(np.diag(sc.Q),
                          np.array([50.0, 50.0, 0.01, 50.0, 50.0, 0.001]))
    assert np.array_equal(np.diag(sc.R), np.array([1.0, 1.0, 10.0]))
    assert sc.grid_side == 1.0 and sc.grid_n == 5
    assert len(initial_state_grid(sc)) == 25


def test_post_capture_momentum_identity():
    sc = detumble_scenario()
    x = post_capture_state(sc)
    m = sc.model
    d = m.dof

    assert np.allclose(m.center_of_mass(x[:d]), 0.0, atol=1e-12)
    assert np.array_equal(x[d + 2:], np.concatenate([[OMEGA0], np.zeros(3)]))

    L, P = m.momentum(x)
    I_lock = m.locked_inertia(x[:d])
    assert np.max(np.abs(P)) <= 1e-10
    assert abs(L - I_lock * OMEGA0) <= 1e-10 * abs(L)

    # scenario start state is exactly the default post-capture state
    assert np.array_equal(sc.bounds.x0, x)


def test_post_capture_zero_rate_is_static():
    sc = detumble_scenario()
    x = post_capture_state(sc, omega0=0.0)
    d = sc.model.dof
    assert np.array_equal(x[d:], np.zeros(d))


def test_post_capture_rate_scales_momentum():
    sc = detumble_scenario()
    m = sc.model
    for w in (0.02, -0.05, OMEGA0):
        x = rigid_rotation_state(m, sc.grasp_q, w)
        L, P = m.momentum(x)
        assert abs(L - m.locked_inertia(x[:m.dof]) * w) <= 1e-10 * max(abs(L), 1e-12)
        assert np.max(np.abs(P)) <= 1e-10


def test_post_capture_needs_arm():
    sc = freeflyer_scenario()
    with pytest.raises(ConfigError, match="grasp"):
        post_capture_state(sc)
    with pytest.raises(ConfigError, match="arm"):
        rigid_rotation_state(sc.model, DETUMBLE_GRASP_Q, OMEGA0)


def test_initial_state_grid_geometry():
    sc = freeflyer_scenario()
    pts = initial_state_grid(sc)
    x0 = sc.bounds.x0
    assert pts.shape == (25, 6)
    assert np.array_equal(pts[12], x0)  # center of a 5x5 grid
    assert np.min(pts[:, 0]) == x0[0] - 0.5 and np.max(pts[:, 0]) == x0[0] + 0.5
    assert np.min(pts[:, 1]) == x0[1] - 0.5 and np.max(pts[:, 1]) == x0[1] + 0.5
    assert np.all(pts[:, 2:] == x0[2:])

    single = initial_state_grid(sc, side=0.0, n=1)
    assert np.array_equal(single, x0[None])
    with pytest.raises(ConfigError):
        initial_state_grid(sc, n=0)


def test_scenario_helpers():
    sc = freeflyer_scenario()
    prob = sc.problem()
    assert prob.K == 100
    assert prob.nx == 6 and prob.nu == 3

    cfg = sc.rollout_config()
    assert cfg.deadband is None
    assert np.array_equal(cfg.u_max, sc.bounds.u_max)
    assert cfg.dt == sc.sim_dt
    cfg_db = sc.rollout_config(deadband=True)
    assert np.array_equal(cfg_db.deadband, sc.deadband)


def test_scenario_validation():
    sc = detumble_scenario()
    with pytest.raises(ConfigError, match="weights"):
        Scenario(name="bad", model=sc.model, weights=sc.weights,
                 bounds=sc.bounds, n_intervals=100, Q=np.eye(5), R=sc.R,
                 estimation=sc.estimation)
    with pytest.raises(ConfigError, match="n_intervals"):
        Scenario(name="bad", model=sc.model, weights=sc.weights,
                 bounds=sc.bounds, n_intervals=50, Q=sc.Q, R=sc.R,
                 estimation=sc.estimation)


def test_load_scenario_by_name():
    assert load_scenario("detumble").name == "detumble"
    assert load_scenario("freeflyer").name == "freeflyer"
    with pytest.raises(ConfigError, match="unknown scenario"):
        load_scenario("nope")
