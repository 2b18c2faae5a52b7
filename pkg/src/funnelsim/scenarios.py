"""Built-in scenario definitions.

Two desk-scale setups: a chaser that has grasped a tumbling target and must
bring the assembly to rest (detumble), and a single free-flying rigid body
driving a square circuit through pinned waypoints (freeflyer).  Constants
that come straight from the referenced hardware are kept byte-exact and
guarded by tests; quantities the source material leaves open carry
documented defaults and are marked as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Link, MultibodyModel, Payload
from .errors import ConfigError
from .roa import EstimationConfig
from .sim import RolloutConfig
from .trajopt import CostWeights, TrajBounds, TranscribedProblem

# Initial tumble rate of the captured target.
OMEGA0 = np.deg2rad(5.0)

# Arm configuration at grasp.  Not specified by the source scenario; chosen
# so the payload sits well clear of the base body (tip roughly 2.8 m out
# with a 1 m base half-width).
DETUMBLE_GRASP_Q = np.array([0.0, 0.5, -0.5])


def detumble_model() -> MultibodyModel:
    """Chaser: 100 kg, 2 m square base; 3-link arm; 50 kg grasped target.

    Link rotational inertias use the uniform-rod value m l^2 / 12 and the
    base and target use the square-plate value m (a^2 + a^2) / 12; the
    source gives only masses and dimensions.  The target is grasped at its
    CoM (offset 0) and folded into the last link.
    """
    return MultibodyModel(
        base_mass=100.0,
        base_inertia=100.0 * (2.0 ** 2 + 2.0 ** 2) / 12.0,
        links=(
            Link(mass=10.0, inertia=10.0 * 0.9 ** 2 / 12.0, length=0.9, com=0.45),
            Link(mass=8.0, inertia=8.0 * 0.7 ** 2 / 12.0, length=0.7, com=0.35),
            Link(mass=4.0, inertia=4.0 * 0.3 ** 2 / 12.0, length=0.3, com=0.15),
        ),
        payload=Payload(mass=50.0, inertia=50.0 * (0.6 ** 2 + 0.6 ** 2) / 12.0,
                        offset=0.0),
        arm_mount=1.0,
    )


def freeflyer_model() -> MultibodyModel:
    """Single planar rigid body: 4.26 kg, 0.064 kg m^2."""
    return MultibodyModel(base_mass=4.26, base_inertia=0.064)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to plan, track, estimate, and verify one maneuver.

    ``deadband`` holds the actuator thresholds the hardware would apply;
    rollouts only use them when explicitly enabled.  ``grasp_q`` is the arm
    configuration at capture for scenarios with an arm.
    """

    name: str
    model: MultibodyModel
    weights: CostWeights
    bounds: TrajBounds
    n_intervals: int
    Q: np.ndarray
    R: np.ndarray
    estimation: EstimationConfig
    deadband: np.ndarray | None = None
    sim_dt: float = 1e-3
    dt_init: float | None = None
    grasp_q: np.ndarray | None = None
    grid_side: float = 1.0
    grid_n: int = 5

    def __post_init__(self):
        nx, nu = self.model.state_dim, self.model.control_dim
        for name in ("Q", "R", "deadband", "grasp_q"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        if self.Q.shape != (nx, nx) or self.R.shape != (nu, nu):
            raise ConfigError("tracking weights do not match the model dimensions")
        if self.bounds.u_min.shape != (nu,):
            raise ConfigError("control bounds do not match the model")
        if self.estimation.x_bar_max.shape != (nx,):
            raise ConfigError("x_bar_max does not match the state dimension")
        if self.estimation.m_knots != self.n_intervals:
            raise ConfigError("estimation knot count must equal n_intervals")
        if self.deadband is not None and self.deadband.shape != (nu,):
            raise ConfigError("deadband thresholds do not match the controls")
        if self.sim_dt <= 0:
            raise ConfigError("sim_dt must be positive")

    def problem(self) -> TranscribedProblem:
        return TranscribedProblem(self.model, self.weights, self.bounds,
                                  self.n_intervals, self.dt_init)

    def rollout_config(self, deadband=False, **kw) -> RolloutConfig:
        """Monitored-rollout settings; deadband applies only on request."""
        return RolloutConfig(
            dt=self.sim_dt,
            u_min=self.bounds.u_min,
            u_max=self.bounds.u_max,
            deadband=self.deadband if deadband else None,
            **kw)


def rigid_rotation_state(model: MultibodyModel, arm_q, omega0: float) -> np.ndarray:
    """Assembly rotating rigidly about its own CoM, which sits at the origin.

    Joint rates are zero, the base spins at omega0, and the base CoM
    translates with the rigid-rotation field omega x r, so the linear
    momentum vanishes and the angular momentum equals the locked inertia
    times omega0.
    """
    q = np.concatenate([[0.0, 0.0, 0.0], np.asarray(arm_q, dtype=float)])
    if len(q) != model.dof:
        raise ConfigError("arm configuration does not match the model")
    q[:2] -= model.center_of_mass(q)
    qd = np.zeros(model.dof)
    qd[0] = -omega0 * q[1]
    qd[1] = omega0 * q[0]
    qd[2] = omega0
    return np.concatenate([q, qd])


def post_capture_state(scenario: Scenario, omega0: float = OMEGA0) -> np.ndarray:
    """State just after a momentum-free capture at the tumble rate omega0."""
    if scenario.grasp_q is None:
        raise ConfigError(f"scenario '{scenario.name}' has no grasp configuration")
    return rigid_rotation_state(scenario.model, scenario.grasp_q, omega0)


def detumble_scenario() -> Scenario:
    """Bring the grasped, tumbling assembly to rest.

    Start: rigid rotation at OMEGA0 about the assembly CoM (origin).  Goal:
    all velocities zero, final pose free.  Forces are limited to 10 N and
    all torques to 50 N m.  Tracking weights, the terminal deviation
    bound, and sim_dt are tuning defaults, not source values.
    """
    model = detumble_model()
    x0 = rigid_rotation_state(model, DETUMBLE_GRASP_Q, OMEGA0)
    xf = np.concatenate([np.full(6, np.nan), np.zeros(6)])
    u_max = np.array([10.0, 10.0, 50.0, 50.0, 50.0, 50.0])
    bounds = TrajBounds(u_min=-u_max, u_max=u_max, x0=x0, xf=xf,
                        dt_bounds=(0.01, 0.12))
    weights = CostWeights(w_time=0.1, W_effort=np.eye(6))
    Q = np.diag([20.0, 20.0, 20.0, 10.0, 10.0, 10.0,
                 5.0, 5.0, 5.0, 2.0, 2.0, 2.0])
    R = 0.1 * np.eye(6)
    x_bar_max = np.array([0.05, 0.05, 0.05, 0.05, 0.05, 0.05,
                          0.01, 0.01, 0.01, 0.01, 0.01, 0.01])
    est = EstimationConfig(n_sims=1000, m_knots=100, x_bar_max=x_bar_max,
                           alpha=np.inf, seed=0)
    return Scenario(name="detumble", model=model, weights=weights,
                    bounds=bounds, n_intervals=100, Q=Q, R=R, estimation=est,
                    sim_dt=0.01, dt_init=0.05, grasp_q=DETUMBLE_GRASP_Q)


def freeflyer_scenario() -> Scenario:
    """Square circuit with three pinned pose waypoints.

    The circuit starts and ends at (2, 2) at rest with a full turn of
    heading accumulated.  Q, R, and the waypoint poses are source values;
    the actuation limits (0.5 N forces, 0.1 N m torque), terminal bound,
    start/end states, and deadband thresholds are documented defaults.
    """
    model = freeflyer_model()
    x0 = np.array([2.0, 2.0, 0.0, 0.0, 0.0, 0.0])
    xf = np.array([2.0, 2.0, 2.0 * np.pi, 0.0, 0.0, 0.0])
    free = np.array([np.nan, np.nan, np.nan])
    waypoints = {
        30: np.concatenate([[3.0, 1.0, np.pi / 2.0], free]),
        50: np.concatenate([[4.0, 2.0, np.pi], free]),
        70: np.concatenate([[3.0, 3.0, 3.0 * np.pi / 2.0], free]),
    }
    u_max = np.array([0.5, 0.5, 0.1])
    bounds = TrajBounds(u_min=-u_max, u_max=u_max, x0=x0, xf=xf,
                        waypoints=waypoints, dt_bounds=(0.05, 0.4))
    weights = CostWeights(w_time=0.01, W_effort=np.eye(3))
    Q = np.diag([50.0, 50.0, 0.01, 50.0, 50.0, 0.001])
    R = np.diag([1.0, 1.0, 10.0])
    x_bar_max = np.array([0.01, 0.01, 0.02, 0.002, 0.002, 0.004])
    est = EstimationConfig(n_sims=1000, m_knots=100, x_bar_max=x_bar_max,
                           alpha=np.inf, seed=0)
    return Scenario(name="freeflyer", model=model, weights=weights,
                    bounds=bounds, n_intervals=100, Q=Q, R=R, estimation=est,
                    deadband=np.array([0.2, 0.2, 0.04]), sim_dt=1e-3,
                    dt_init=0.3, grid_side=1.0, grid_n=5)


SCENARIOS = {
    "detumble": detumble_scenario,
    "freeflyer": freeflyer_scenario,
}


def load_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown scenario '{name}' (have: {', '.join(sorted(SCENARIOS))})"
        ) from None


def initial_state_grid(scenario: Scenario, side: float | None = None,
                       n: int | None = None) -> np.ndarray:
    """n x n grid of planar position offsets around the scenario start."""
    side = scenario.grid_side if side is None else side
    n = scenario.grid_n if n is None else n
    x0 = scenario.bounds.x0
    if x0 is None or np.any(np.isnan(x0)):
        raise ConfigError("scenario start state must be fully pinned")
    if n < 1 or side < 0:
        raise ConfigError("grid needs n >= 1 and side >= 0")
    offs = np.linspace(-0.5 * side, 0.5 * side, n) if n > 1 else np.zeros(1)
    pts = np.tile(x0, (n * n, 1))
    dx, dy = np.meshgrid(offs, offs)
    pts[:, 0] += dx.ravel()
    pts[:, 1] += dy.ravel()
    return pts
