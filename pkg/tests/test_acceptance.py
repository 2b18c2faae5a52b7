"""End-to-end acceptance checks, one test per guaranteed behavior.

Each test states its tolerance and, where one applies, its wall-clock
budget inline.  These run the real pipelines (no mocks); the slow
fixtures are shared across tests, so run this module in one piece.
"""

import time

import numpy as np
import pytest

from funnelsim import (
    CostWeights,
    EllipsoidSampler,
    EstimationConfig,
    PointMass,
    RolloutConfig,
    TrajBounds,
    TranscribedProblem,
    Trajectory,
    check_feasibility,
    detumble_scenario,
    estimate_funnel,
    freeflyer_scenario,
    initial_state_grid,
    integrate,
    linearize,
    post_capture_state,
    rho_final,
    rollout_batch,
    save_funnel,
    solve,
    solve_care,
    solve_tvlqr,
    verify_funnel,
)

CARE_DI = np.array([[np.sqrt(3.0), 1.0], [1.0, np.sqrt(3.0)]])


@pytest.fixture(scope="module")
def freeflyer_bundle():
    sc = freeflyer_scenario()
    t0 = time.perf_counter()
    res = solve(sc.problem())
    elapsed = time.perf_counter() - t0
    traj = res.trajectory
    policy = solve_tvlqr(traj, linearize(sc.model, traj), sc.Q, sc.R)
    return sc, traj, policy, elapsed


@pytest.fixture(scope="module")
def detumble_bundle():
    sc = detumble_scenario()
    res = solve(sc.problem())
    traj = res.trajectory
    policy = solve_tvlqr(traj, linearize(sc.model, traj), sc.Q, sc.R)
    return sc, traj, policy


@pytest.fixture(scope="module")
def toy_bundle():
    """1-DoF double integrator holding the origin for 0.5 s.

    Horizon short enough that the closed-loop reachable set stays
    ellipse-like; the actuator bound (6 N) never binds inside it, so a
    brute-force grid can measure the true success region exactly.
    """
    model = PointMass((1.0,))
    nk, dtk = 10, 0.05
    traj = Trajectory(dt=dtk, xs=np.zeros((nk + 1, 2)), us=np.zeros((nk, 1)))
    policy = solve_tvlqr(traj, linearize(model, traj), np.eye(2),
                         np.array([[1.0]]))
    u_lim = np.array([6.0])
    cfg = RolloutConfig(dt=0.01, u_min=-u_lim, u_max=u_lim)
    x_bar = np.array([0.3, 0.3])
    return model, policy, cfg, x_bar


@pytest.fixture(scope="module")
def toy_funnel(toy_bundle):
    model, policy, cfg, x_bar = toy_bundle
    est = EstimationConfig(n_sims=1200, m_knots=policy.n_intervals,
                           x_bar_max=x_bar, alpha=np.inf, seed=7)
    t0 = time.perf_counter()
    funnel = estimate_funnel(model, policy, est, rollout_config=cfg,
                             parallel=False)
    return funnel, time.perf_counter() - t0


def test_free_drift_conserves_momentum_and_forced_work_matches_energy():
    """Zero-input momentum drift stays below 1e-6 relative over 10 s and
    each forced step balances kinetic energy against control work to 1e-5
    relative, within a 10 s wall-clock budget."""
    t0 = time.perf_counter()
    sc = detumble_scenario()
    model = sc.model
    x0 = post_capture_state(sc)

    _, xs = integrate(model, lambda t, x: np.zeros(6), x0, 10.0, 2e-3)
    L0, P0 = model.momentum(x0)
    ref = np.hypot(L0, np.linalg.norm(P0))
    L, P = model.momentum(xs[::250])
    drift = np.sqrt((L - L0) ** 2 + np.sum((P - P0) ** 2, axis=-1)) / ref
    assert drift.max() <= 1e-6

    u = np.array([2.0, -1.0, 5.0, 3.0, -2.0, 1.0])
    _, xs2 = integrate(model, lambda t, x: u, x0, 2.0, 1e-3)
    E = model.kinetic_energy(xs2)
    work = (xs2[1:, :6] - xs2[:-1, :6]) @ u
    rel = np.abs(E[1:] - E[:-1] - work) / np.maximum(1.0, np.abs(E[1:]))
    assert rel.max() <= 1e-5

    assert time.perf_counter() - t0 < 10.0


def test_stationary_regulator_matches_closed_form_and_stays_put(toy_bundle):
    """The infinite-horizon value of the unit double integrator equals its
    closed form to 1e-8, and backward integration from that value along a
    constant-dynamics trajectory never moves it by more than 1e-6."""
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    S = solve_care(A, B, np.eye(2), np.array([[1.0]]))
    assert np.max(np.abs(S - CARE_DI)) <= 1e-8

    _, policy, _, _ = toy_bundle
    dev = np.max(np.abs(policy.S - CARE_DI), axis=(1, 2))
    assert dev.max() <= 1e-6


def test_planned_trajectories_meet_pins_and_analytic_optimum(freeflyer_bundle):
    """The circuit plan hits every pinned waypoint and keeps integration
    defects below 1e-6; the rest-to-rest point-mass plan stays within 2%
    of the analytic minimum-effort cubic at the knots.  Each solve fits a
    60 s budget."""
    sc, traj, _, ff_seconds = freeflyer_bundle
    assert ff_seconds < 60.0
    rep = check_feasibility(sc.model, traj, sc.bounds)
    assert rep.max_defect <= 1e-6
    assert rep.max_pin_violation <= 1e-6
    for k, pin in sc.bounds.waypoints.items():
        assert np.max(np.abs(traj.xs[k, :3] - pin[:3])) <= 1e-6

    d, T, K = 1.0, 2.0, 100
    h = T / K
    model = PointMass((1.0,))
    bounds = TrajBounds(u_min=np.array([-10.0]), u_max=np.array([10.0]),
                        x0=np.array([0.0, 0.0]), xf=np.array([d, 0.0]),
                        dt_bounds=(h, h))
    prob = TranscribedProblem(model, CostWeights(w_time=0.0, W_effort=np.eye(1)),
                              bounds, K, None)
    t0 = time.perf_counter()
    res = solve(prob)
    assert time.perf_counter() - t0 < 60.0
    di = res.trajectory
    tau = di.times / T
    x_ref = d * (3.0 * tau ** 2 - 2.0 * tau ** 3)
    v_ref = (6.0 * d / T) * (tau - tau ** 2)
    u_ref = (6.0 * d / T ** 2) * (1.0 - 2.0 * tau[:-1])
    assert np.max(np.abs(di.xs[:, 0] - x_ref)) <= 0.02 * np.max(np.abs(x_ref))
    assert np.max(np.abs(di.xs[:, 1] - v_ref)) <= 0.02 * np.max(np.abs(v_ref))
    assert np.max(np.abs(di.us[:, 0] - u_ref)) <= 0.02 * np.max(np.abs(u_ref))


def test_every_grid_offset_tracks_into_the_terminal_set(freeflyer_bundle):
    """All 25 starts on the 1 m offset grid finish the horizon with
    terminal cost-to-go below the outlet threshold, within 2 min."""
    sc, _, policy, _ = freeflyer_bundle
    t0 = time.perf_counter()
    grid = initial_state_grid(sc)
    assert grid.shape == (25, 6)
    res = rollout_batch(sc.model, policy, grid, sc.rollout_config())
    rf = rho_final(policy, sc.estimation.x_bar_max)
    terminal = res.cost[:, -1]
    assert np.all(res.completed)
    assert np.all(terminal < rf)
    assert time.perf_counter() - t0 < 120.0


def test_toy_funnel_matches_brute_force_ground_truth(toy_bundle, toy_funnel):
    """At least 95% of 500 fresh inlet samples succeed, and the inlet
    ellipse area lands within [0.5, 1.0] times the success-region area
    measured on a brute-force grid, all within 10 min."""
    model, policy, cfg, x_bar = toy_bundle
    funnel, est_seconds = toy_funnel
    t0 = time.perf_counter()
    rf = rho_final(policy, x_bar)

    rng = np.random.default_rng(np.random.SeedSequence(20250814))
    report = verify_funnel(model, policy, funnel, 500, rng, rollout_config=cfg)
    assert report.fraction >= 0.95

    n_grid, half = 161, 3.0
    gx = np.linspace(-half, half, n_grid)
    GX, GV = np.meshgrid(gx, gx)
    pts = np.column_stack([GX.ravel(), GV.ravel()])
    success = np.zeros(len(pts), dtype=bool)
    for i in range(0, len(pts), 4096):
        res = rollout_batch(model, policy, pts[i:i + 4096], cfg)
        term = res.cost[:, -1]
        success[i:i + 4096] = res.completed & np.isfinite(term) & (term < rf)
    mask = success.reshape(n_grid, n_grid)
    # the measured region must sit strictly inside the scan window
    assert not (mask[0].any() or mask[-1].any()
                or mask[:, 0].any() or mask[:, -1].any())
    cell = (gx[1] - gx[0]) ** 2
    area_true = success.sum() * cell
    area_est = np.pi * funnel.rho[0] / np.sqrt(np.linalg.det(funnel.S[0]))
    assert 0.5 * area_true <= area_est <= 1.0 * area_true

    assert est_seconds + (time.perf_counter() - t0) < 600.0


def test_tighter_fuel_budgets_give_nested_funnels(detumble_bundle):
    """Median funnel thresholds over five seeds order by fuel margin,
    rho(0.5) <= rho(1) <= rho(inf), at 90% or more of the commonly shrunk
    knots, within 30 min for all fifteen estimates."""
    sc, _, policy = detumble_bundle
    t0 = time.perf_counter()
    cfg = sc.rollout_config()
    alphas = (np.inf, 1.0, 0.5)
    rhos = {a: [] for a in alphas}
    for seed in range(5):
        for a in alphas:
            est = EstimationConfig(n_sims=200, m_knots=100,
                                   x_bar_max=sc.estimation.x_bar_max,
                                   alpha=a, seed=seed)
            funnel = estimate_funnel(sc.model, policy, est, rollout_config=cfg,
                                     parallel=True, batch_size=20,
                                     check_outlet=(seed == 0 and np.isinf(a)))
            rhos[a].append(funnel.rho)
    med = {a: np.median(np.stack(rhos[a]), axis=0) for a in alphas}
    shrunk = (np.isfinite(med[0.5][:100]) & np.isfinite(med[1.0][:100])
              & np.isfinite(med[np.inf][:100]))
    assert shrunk.sum() >= 30
    ok = ((med[0.5][:100][shrunk] <= med[1.0][:100][shrunk] * (1.0 + 1e-9))
          & (med[1.0][:100][shrunk] <= med[np.inf][:100][shrunk] * (1.0 + 1e-9)))
    assert ok.mean() >= 0.9
    assert time.perf_counter() - t0 < 1800.0


def test_deadband_degrades_tracking_with_residual_velocity(freeflyer_bundle):
    """With actuator deadbands enabled, the fresh-sample success fraction
    drops strictly below the deadband-free fraction on the same 200
    starts, and every failing trial ends still moving."""
    sc, _, policy, _ = freeflyer_bundle
    est = EstimationConfig(n_sims=300, m_knots=100,
                           x_bar_max=sc.estimation.x_bar_max,
                           alpha=np.inf, seed=11)
    funnel = estimate_funnel(sc.model, policy, est,
                             rollout_config=sc.rollout_config(),
                             parallel=True, batch_size=128)

    rng = np.random.default_rng(np.random.SeedSequence(21))
    off = verify_funnel(sc.model, policy, funnel, 200, rng,
                        rollout_config=sc.rollout_config())
    rng = np.random.default_rng(np.random.SeedSequence(21))
    on = verify_funnel(sc.model, policy, funnel, 200, rng,
                       rollout_config=sc.rollout_config(deadband=True))
    assert on.fraction < off.fraction

    fails = [r for r in on.records if not r["success"]]
    assert fails
    speeds = [np.linalg.norm(np.asarray(r["x_final"])[3:6]) for r in fails]
    assert min(speeds) > 1e-3


def test_estimation_invariants_hold(toy_bundle, toy_funnel, tmp_path):
    """Thresholds only shrink and replay to the reported funnel, the
    outlet never moves, samples stay inside the live inlet, equal seeds
    give identical funnels, and a single parallel batch shrinks at least
    as much as a sequential pass over the same candidates."""
    model, policy, cfg, x_bar = toy_bundle
    funnel, _ = toy_funnel
    m = policy.n_intervals
    rf = rho_final(policy, x_bar)
    beta = 1000.0

    # replay the per-trial update log
    rho = np.full(m + 1, np.inf)
    rho[m] = rf
    for rec in funnel.history:
        if rec["termination"] != "skipped":
            draw_rho = rho[0] if np.isfinite(rho[0]) else beta * rf
            j0 = policy.knot_cost(0, np.asarray(rec["x0"]))
            assert j0 <= draw_rho * (1.0 + 1e-9)
        for k, val in rec["updates"]:
            assert k < m
            assert val < rho[k]
            rho[k] = val
    assert rho[m] == rf
    assert np.array_equal(rho, funnel.rho)
    assert funnel.rho[-1] == rf

    # seeded determinism
    est = EstimationConfig(n_sims=150, m_knots=m, x_bar_max=x_bar,
                           alpha=np.inf, seed=3)
    f1 = estimate_funnel(model, policy, est, rollout_config=cfg, parallel=False)
    f2 = estimate_funnel(model, policy, est, rollout_config=cfg, parallel=False)
    assert np.array_equal(f1.rho, f2.rho)
    assert [r["x0"] for r in f1.history] == [r["x0"] for r in f2.history]
    save_funnel(f1, tmp_path / "a.json")
    save_funnel(f2, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    f3 = estimate_funnel(
        model, policy,
        EstimationConfig(n_sims=150, m_knots=m, x_bar_max=x_bar,
                         alpha=np.inf, seed=4),
        rollout_config=cfg, parallel=False)
    assert not np.array_equal(f3.rho, f1.rho)

    # single-batch parallel shrinks at least as much as sequential
    sampler = EllipsoidSampler(center=policy.xs[0], S=policy.S[0], rho=50.0 * rf)
    cand = sampler.sample(np.random.default_rng(5), n=60)
    seq = estimate_funnel(model, policy, est, rollout_config=cfg,
                          parallel=False, candidates=cand)
    par = estimate_funnel(model, policy, est, rollout_config=cfg,
                          parallel=True, batch_size=len(cand), candidates=cand)
    assert np.all(par.rho <= seq.rho * (1.0 + 1e-12))
