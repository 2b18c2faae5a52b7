"""Closed-loop rollout engine.

Trajectories are integrated with fixed-step RK4 at a resolution that
divides the policy's knot spacing.  The control applied at any instant is
the policy feedback passed through an optional actuator deadband and then
saturation.  Monitors run at knot boundaries: state divergence, fuel
budget exhaustion, and tracking-cost exceedance against per-knot
thresholds.  A batch of initial states is integrated together; trajectories
that trip a monitor freeze at the offending knot while the rest continue.

Everything here is deterministic: same inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .trajopt import Trajectory

COMPLETED = 0
DIVERGED = 1
FUEL_EXCEEDED = 2
COST_EXCEEDED = 3

REASONS = ("completed", "diverged", "fuel-exceeded", "cost-exceeded")

# Tolerance band on the budget check: the running trapezoid sum and the
# budget are computed by different summation orders, so a zero-margin
# budget on an exactly-nominal rollout must not breach on roundoff.
FUEL_RTOL = 1e-9


def nominal_fuel(traj: Trajectory) -> float:
    """Fuel of the nominal plan: dt * sum_k sum_i |u_ki|.

    Exact for the zero-order-hold control profile the plan represents.
    """
    return float(traj.dt * np.sum(np.abs(traj.us)))


@dataclass(frozen=True)
class FuelBudget:
    """Budget F_max = (1 + margin) * nominal; margin may be infinite."""

    nominal: float
    margin: float

    def __post_init__(self):
        if self.nominal < 0 or self.margin < 0:
            raise ConfigError("fuel budget terms must be non-negative")

    @property
    def limit(self) -> float:
        if np.isinf(self.margin):
            return np.inf
        return (1.0 + self.margin) * self.nominal

    @classmethod
    def from_trajectory(cls, traj: Trajectory, margin: float) -> "FuelBudget":
        return cls(nominal=nominal_fuel(traj), margin=margin)


@dataclass(frozen=True)
class RolloutConfig:
    """Integrator and monitor settings for closed-loop rollouts."""

    dt: float = 1e-3
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    deadband: np.ndarray | None = None
    fuel: FuelBudget | None = None
    cost_thresholds: np.ndarray | None = None
    divergence_norm: float = 1e6
    record_fine: bool = False

    def __post_init__(self):
        for name in ("u_min", "u_max", "deadband", "cost_thresholds"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        if self.dt <= 0:
            raise ConfigError("integrator dt must be positive")
        if self.deadband is not None and np.any(self.deadband < 0):
            raise ConfigError("deadband thresholds must be non-negative")

    def replace(self, **kw) -> "RolloutConfig":
        from dataclasses import replace as _replace

        return _replace(self, **kw)


@dataclass
class FineTrace:
    """Integrator-resolution record of a single rollout."""

    ts: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    cost: np.ndarray
    fuel: np.ndarray


@dataclass
class RolloutResult:
    ts: np.ndarray
    xs: np.ndarray       # (K+1, nx), NaN beyond a terminated knot
    cost: np.ndarray     # (K+1,)
    fuel: np.ndarray     # (K+1,)
    reason: str
    knot: int | None
    fine: FineTrace | None = None

    @property
    def completed(self) -> bool:
        return self.reason == "completed"


@dataclass
class BatchRolloutResult:
    ts: np.ndarray
    xs: np.ndarray       # (B, K+1, nx)
    cost: np.ndarray     # (B, K+1)
    fuel: np.ndarray     # (B, K+1)
    reasons: np.ndarray  # (B,) int codes into REASONS
    knots: np.ndarray    # (B,) breach knot, -1 when completed

    @property
    def completed(self) -> np.ndarray:
        return self.reasons == COMPLETED


def _substeps(policy_dt: float, sim_dt: float) -> int:
    n = policy_dt / sim_dt
    n_round = int(round(n))
    if n_round < 1 or abs(n - n_round) > 1e-9 * max(1.0, n):
        raise ConfigError(
            f"integrator dt {sim_dt} must divide the knot spacing {policy_dt}")
    return n_round


def _engine(system, policy, X0, config: RolloutConfig):
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    B, nx = X0.shape
    if nx != policy.state_dim:
        raise ConfigError(f"initial states must have {policy.state_dim} entries")
    K = policy.n_intervals
    n_sub = _substeps(policy.dt, config.dt)
    h = config.dt
    thr = config.cost_thresholds
    if thr is not None and thr.shape != (K + 1,):
        raise ConfigError("cost_thresholds must have one entry per knot")
    flimit = config.fuel.limit if config.fuel is not None else np.inf
    if np.isfinite(flimit):
        flimit = flimit * (1.0 + FUEL_RTOL) + 1e-12
    db = config.deadband
    lo, hi = config.u_min, config.u_max

    def control(t, x, seg):
        u = policy.feedback(t, x, segment=seg)
        if db is not None:
            u = np.where(np.abs(u) >= db, u, 0.0)
        if lo is not None:
            u = np.maximum(u, lo)
        if hi is not None:
            u = np.minimum(u, hi)
        return u

    xs = np.full((B, K + 1, nx), np.nan)
    cost = np.full((B, K + 1), np.nan)
    fuel = np.full((B, K + 1), np.nan)
    reasons = np.full(B, COMPLETED, dtype=np.int8)
    knots = np.full(B, -1, dtype=np.int64)

    xs[:, 0] = X0
    cost[:, 0] = policy.knot_cost(0, X0)
    fuel[:, 0] = 0.0

    alive = np.ones(B, dtype=bool)
    x = X0.copy()
    facc = np.zeros(B)
    u0 = control(0.0, X0, 0)

    fine = None
    if config.record_fine:
        if B != 1:
            raise ConfigError("fine recording requires a single rollout")
        steps = K * n_sub + 1
        fine = FineTrace(ts=h * np.arange(steps),
                         xs=np.full((steps, nx), np.nan),
                         us=np.full((steps, policy.control_dim), np.nan),
                         cost=np.full(steps, np.nan),
                         fuel=np.full(steps, np.nan))
        fine.xs[0] = X0[0]
        fine.us[0] = u0[0]
        fine.cost[0] = policy.cost_to_go(0.0, X0[0])
        fine.fuel[0] = 0.0

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, K + 1):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            xa = x[idx]
            fa = facc[idx]
            t = (k - 1) * policy.dt
            seg = k - 1
            # The held control and gain jump at knot boundaries; every stage
            # of a step samples the current interval's piece so each step
            # integrates a smooth field (keeps RK4 at full order) and the
            # fuel trapezoid sees one-sided limits (exact for held controls).
            pa = np.sum(np.abs(control(t, xa, seg)), axis=-1)
            for s in range(n_sub):
                ts0 = t + s * h
                u1 = control(ts0, xa, seg)
                k1 = system.derivative(xa, u1)
                k2 = system.derivative(xa + 0.5 * h * k1, control(ts0 + 0.5 * h, xa + 0.5 * h * k1, seg))
                k3 = system.derivative(xa + 0.5 * h * k2, control(ts0 + 0.5 * h, xa + 0.5 * h * k2, seg))
                k4 = system.derivative(xa + h * k3, control(ts0 + h, xa + h * k3, seg))
                xa = xa + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                unew = control(ts0 + h, xa, seg)
                sabs = np.sum(np.abs(unew), axis=-1)
                fa = fa + 0.5 * h * (pa + sabs)
                pa = sabs
                if fine is not None:
                    i = (k - 1) * n_sub + s + 1
                    fine.xs[i] = xa[0]
                    fine.us[i] = unew[0]
                    fine.cost[i] = policy.cost_to_go(ts0 + h, xa[0])
                    fine.fuel[i] = fa[0]
            x[idx] = xa
            facc[idx] = fa

            J = policy.knot_cost(k, xa)
            dev = np.linalg.norm(xa - policy.xs[k], axis=-1)
            xs[idx, k] = xa
            cost[idx, k] = J
            fuel[idx, k] = fa

            bad_div = ~np.isfinite(J) | (dev > config.divergence_norm)
            bad_fuel = ~bad_div & (fa > flimit)
            bad_cost = np.zeros_like(bad_div)
            if thr is not None:
                with np.errstate(invalid="ignore"):
                    bad_cost = ~bad_div & ~bad_fuel & (J > thr[k])
            dead = bad_div | bad_fuel | bad_cost
            if np.any(dead):
                di = idx[dead]
                reasons[di] = np.where(bad_div[dead], DIVERGED,
                                       np.where(bad_fuel[dead], FUEL_EXCEEDED, COST_EXCEEDED))
                knots[di] = k
                alive[di] = False

    if fine is not None and knots[0] >= 0:
        n_keep = knots[0] * n_sub + 1
        fine = FineTrace(ts=fine.ts[:n_keep], xs=fine.xs[:n_keep], us=fine.us[:n_keep],
                         cost=fine.cost[:n_keep], fuel=fine.fuel[:n_keep])

    return BatchRolloutResult(ts=policy.ts.copy(), xs=xs, cost=cost, fuel=fuel,
                              reasons=reasons, knots=knots), fine


def rollout_batch(system, policy, X0, config: RolloutConfig) -> BatchRolloutResult:
    """Integrate a batch of initial states under the policy."""
    if config.record_fine:
        raise ConfigError("fine recording is only available through rollout()")
    batch, _ = _engine(system, policy, X0, config)
    return batch


def rollout(system, policy, x0, config: RolloutConfig) -> RolloutResult:
    """Single-trajectory rollout; see rollout_batch."""
    batch, fine = _engine(system, policy, np.asarray(x0, dtype=float)[None], config)
    knot = int(batch.knots[0])
    return RolloutResult(ts=batch.ts, xs=batch.xs[0], cost=batch.cost[0],
                         fuel=batch.fuel[0], reason=REASONS[batch.reasons[0]],
                         knot=None if knot < 0 else knot, fine=fine)


def integrate(system, control_fn, x0, duration, dt):
    """Open-loop fixed-step RK4 under control_fn(t, x); returns (ts, xs)."""
    if dt <= 0 or duration <= 0:
        raise ConfigError("duration and dt must be positive")
    steps = int(round(duration / dt))
    x = np.asarray(x0, dtype=float).copy()
    ts = dt * np.arange(steps + 1)
    xs = np.empty((steps + 1,) + x.shape)
    xs[0] = x
    for i in range(steps):
        t = i * dt
        k1 = system.derivative(x, control_fn(t, x))
        k2 = system.derivative(x + 0.5 * dt * k1, control_fn(t + 0.5 * dt, x + 0.5 * dt * k1))
        k3 = system.derivative(x + 0.5 * dt * k2, control_fn(t + 0.5 * dt, x + 0.5 * dt * k2))
        k4 = system.derivative(x + dt * k3, control_fn(t + dt, x + dt * k3))
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        xs[i + 1] = x
    return ts, xs


def save_rollout(result: RolloutResult, path) -> None:
    """CSV export of a fine-resolution rollout trace."""
    if result.fine is None:
        raise ConfigError("rollout was not recorded at fine resolution")
    import csv

    tr = result.fine
    nx = tr.xs.shape[1]
    nu = tr.us.shape[1]
    header = (["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
              + ["cost", "fuel"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(tr.ts)):
            row = ([repr(float(tr.ts[i]))]
                   + [repr(float(v)) for v in tr.xs[i]]
                   + [repr(float(v)) for v in tr.us[i]]
                   + [repr(float(tr.cost[i])), repr(float(tr.fuel[i]))])
            w.writerow(row)
