"""Shared model and policy builders for the test suite."""

import numpy as np

from funnelsim.dynamics import MultibodyModel
from funnelsim.scenarios import detumble_model, freeflyer_model
from funnelsim.trajopt import Trajectory
from funnelsim.tvlqr import TvlqrPolicy


def chaser_assembly() -> MultibodyModel:
    """100 kg base with a 3-link arm holding a grasped 50 kg body."""
    return detumble_model()


def rigid_body() -> MultibodyModel:
    """Single planar rigid body (the air-bearing platform numbers)."""
    return freeflyer_model()


def held_control_trajectory(model: MultibodyModel, x0, us, dt) -> Trajectory:
    """Exact knot states of a linkless body under piecewise-held inputs.

    With a constant mass matrix the flow is quadratic in time over each
    interval, so these knots lie exactly on the continuous solution an RK4
    rollout reproduces (to roundoff).
    """
    assert model.n_joints == 0
    us = np.asarray(us, dtype=float)
    Mdiag = np.array([model.base_mass, model.base_mass, model.base_inertia])
    xs = np.empty((len(us) + 1, 6))
    xs[0] = x0
    for k, u in enumerate(us):
        a = u / Mdiag
        q, qd = xs[k, :3], xs[k, 3:]
        xs[k + 1, :3] = q + dt * qd + 0.5 * dt**2 * a
        xs[k + 1, 3:] = qd + dt * a
    return Trajectory(dt=dt, xs=xs, us=us)


def manual_policy(traj: Trajectory, gains=None, S=None, Q=None, R=None) -> TvlqrPolicy:
    """Policy container around a trajectory with hand-picked gains and S."""
    n = len(traj.xs)
    nx, nu = traj.state_dim, traj.control_dim
    if gains is None:
        gains = np.zeros((nu, nx))
    gains = np.asarray(gains, dtype=float)
    if gains.ndim == 2:
        gains = np.repeat(gains[None], n, axis=0)
    if S is None:
        S = np.eye(nx)
    S = np.asarray(S, dtype=float)
    if S.ndim == 2:
        S = np.repeat(S[None], n, axis=0)
    return TvlqrPolicy(
        ts=traj.times.copy(), xs=traj.xs.copy(), us=traj.us.copy(),
        S=S, K=gains,
        Q=np.eye(nx) if Q is None else np.asarray(Q, dtype=float),
        R=np.eye(nu) if R is None else np.asarray(R, dtype=float),
    )
