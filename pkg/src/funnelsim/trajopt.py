"""Minimum-effort trajectory optimization by direct transcription.

States and controls at every knot are decision variables together with a
single shared interval length dt, so the optimizer can trade horizon length
against effort.  Dynamics enter as explicit-Euler defect equalities; bounds,
boundary conditions, and interior waypoints are box constraints on the
decision vector.  The resulting equality-constrained problem is handed to
the augmented Lagrangian solver.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .alsolver import AlOptions, solve_auglag
from .errors import ConfigError, SolverError


@dataclass(frozen=True)
class Trajectory:
    """Knot states xs (K+1, nx), interval controls us (K, nu), uniform dt."""

    dt: float
    xs: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        us = np.asarray(self.us, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "us", us)
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if xs.ndim != 2 or us.ndim != 2 or xs.shape[0] != us.shape[0] + 1:
            raise ConfigError("need K+1 states and K controls")

    @property
    def n_intervals(self) -> int:
        return self.us.shape[0]

    @property
    def state_dim(self) -> int:
        return self.xs.shape[1]

    @property
    def control_dim(self) -> int:
        return self.us.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.xs.shape[0])

    @property
    def duration(self) -> float:
        return self.dt * self.n_intervals


def trajectory_fingerprint(traj: Trajectory) -> str:
    """Content hash identifying a trajectory's exact knot data."""
    h = hashlib.sha256()
    h.update(np.float64(traj.dt).tobytes())
    h.update(np.ascontiguousarray(traj.xs, dtype=float).tobytes())
    h.update(np.ascontiguousarray(traj.us, dtype=float).tobytes())
    return "sha256:" + h.hexdigest()


def save_trajectory(traj: Trajectory, path) -> None:
    """Write knots as CSV: t, positions, rates, controls.

    The final row has empty control cells, as no control acts after the
    last knot.
    """
    d = traj.state_dim // 2
    nu = traj.control_dim
    header = (["t"] + [f"q{i}" for i in range(d)] + [f"qd{i}" for i in range(d)]
              + [f"u{i}" for i in range(nu)])
    ts = traj.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(traj.n_intervals + 1):
            row = [repr(float(ts[k]))] + [repr(float(v)) for v in traj.xs[k]]
            if k < traj.n_intervals:
                row += [repr(float(v)) for v in traj.us[k]]
            else:
                row += [""] * nu
            w.writerow(row)


def load_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ConfigError(f"{path}: not a trajectory file")
    header = rows[0]
    nx = sum(1 for h in header if h.startswith(("q", "qd")) and not h.startswith("u"))
    nu = sum(1 for h in header if h.startswith("u"))
    body = rows[1:]
    ts = np.array([float(r[0]) for r in body])
    xs = np.array([[float(v) for v in r[1:1 + nx]] for r in body])
    us = np.array([[float(v) for v in r[1 + nx:]] for r in body[:-1]])
    if len(body[-1]) > 1 + nx and any(v != "" for v in body[-1][1 + nx:]):
        raise ConfigError(f"{path}: final row must not carry controls")
    if len(ts) < 2:
        raise ConfigError(f"{path}: need at least two knots")
    dts = np.diff(ts)
    dt = float(dts[0])
    if np.max(np.abs(dts - dt)) > 1e-9 * max(1.0, dt):
        raise ConfigError(f"{path}: knot spacing is not uniform")
    return Trajectory(dt=dt, xs=xs, us=us.reshape(len(body) - 1, nu))


@dataclass(frozen=True)
class CostWeights:
    """Objective terms.

    w_time * duration + dt * sum_k u_k' W_effort u_k + x_N' W_terminal x_N.
    The terminal term is a plain quadratic in the final knot state; leave it
    None (zero) when final conditions are handled by hard pins alone.
    """

    w_time: float
    W_effort: np.ndarray
    W_terminal: np.ndarray | None = None

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W_effort, dtype=float))
        W = 0.5 * (W + W.T)
        object.__setattr__(self, "W_effort", W)
        if self.w_time < 0:
            raise ConfigError("time weight must be non-negative")
        if np.any(np.linalg.eigvalsh(W) < 0):
            raise ConfigError("effort weight must be positive semidefinite")
        if self.W_terminal is not None:
            Wf = np.atleast_2d(np.asarray(self.W_terminal, dtype=float))
            Wf = 0.5 * (Wf + Wf.T)
            object.__setattr__(self, "W_terminal", Wf)
            if np.any(np.linalg.eigvalsh(Wf) < 0):
                raise ConfigError("terminal weight must be positive semidefinite")


@dataclass(frozen=True)
class TrajBounds:
    """Box limits and pins.  NaN entries in pins leave a component free."""

    u_min: np.ndarray
    u_max: np.ndarray
    q_min: np.ndarray | None = None
    q_max: np.ndarray | None = None
    qd_min: np.ndarray | None = None
    qd_max: np.ndarray | None = None
    x0: np.ndarray | None = None
    xf: np.ndarray | None = None
    waypoints: dict = field(default_factory=dict)
    dt_bounds: tuple = (0.01, 0.2)

    def __post_init__(self):
        for name in ("u_min", "u_max", "q_min", "q_max", "qd_min", "qd_max", "x0", "xf"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        object.__setattr__(self, "waypoints",
                           {int(k): np.asarray(v, dtype=float) for k, v in self.waypoints.items()})
        lo, hi = self.dt_bounds
        if not (0 < lo <= hi):
            raise ConfigError("dt bounds must satisfy 0 < lower <= upper")
        if np.any(self.u_min > self.u_max):
            raise ConfigError("u_min exceeds u_max")


class TranscribedProblem:
    """Decision vector z = [X.flat, U.flat, dt] plus defect constraints."""

    def __init__(self, system, weights: CostWeights, bounds: TrajBounds,
                 n_intervals: int, dt_init: float | None = None):
        if n_intervals < 1:
            raise ConfigError("need at least one interval")
        self.system = system
        self.weights = weights
        self.bounds = bounds
        self.K = int(n_intervals)
        self.nx = system.state_dim
        self.nq = system.state_dim // 2
        self.nu = system.control_dim
        lo, hi = bounds.dt_bounds
        self.dt_init = float(dt_init) if dt_init is not None else 0.5 * (lo + hi)
        if not (lo <= self.dt_init <= hi):
            raise ConfigError("dt_init outside dt bounds")
        if bounds.u_min.shape != (self.nu,) or bounds.u_max.shape != (self.nu,):
            raise ConfigError("control bounds must have control_dim entries")
        for k in bounds.waypoints:
            if not (0 <= k <= self.K):
                raise ConfigError(f"waypoint knot {k} outside horizon")
        self.nz = (self.K + 1) * self.nx + self.K * self.nu + 1
        self._cache_key = None
        self._cache = None

    # packing ---------------------------------------------------------------

    def pack(self, X, U, dt):
        return np.concatenate([np.ravel(X), np.ravel(U), [dt]])

    def unpack(self, z):
        K, nx, nu = self.K, self.nx, self.nu
        X = z[: (K + 1) * nx].reshape(K + 1, nx)
        U = z[(K + 1) * nx: (K + 1) * nx + K * nu].reshape(K, nu)
        return X, U, float(z[-1])

    def box(self):
        K, nx, nq, nu = self.K, self.nx, self.nq, self.nu
        b = self.bounds
        lbx = np.full((K + 1, nx), -np.inf)
        ubx = np.full((K + 1, nx), np.inf)
        if b.q_min is not None:
            lbx[:, :nq] = b.q_min
        if b.q_max is not None:
            ubx[:, :nq] = b.q_max
        if b.qd_min is not None:
            lbx[:, nq:] = b.qd_min
        if b.qd_max is not None:
            ubx[:, nq:] = b.qd_max

        def pin(row_lb, row_ub, values, offset=0):
            v = np.asarray(values, dtype=float)
            keep = ~np.isnan(v)
            row_lb[offset:offset + v.size][keep] = v[keep]
            row_ub[offset:offset + v.size][keep] = v[keep]

        if b.x0 is not None:
            pin(lbx[0], ubx[0], b.x0)
        if b.xf is not None:
            pin(lbx[-1], ubx[-1], b.xf)
        for k, qpin in b.waypoints.items():
            pin(lbx[k], ubx[k], qpin)

        lbu = np.tile(b.u_min, (K, 1))
        ubu = np.tile(b.u_max, (K, 1))
        lb = np.concatenate([lbx.ravel(), lbu.ravel(), [b.dt_bounds[0]]])
        ub = np.concatenate([ubx.ravel(), ubu.ravel(), [b.dt_bounds[1]]])
        return lb, ub

    def var_scale(self):
        """Per-variable scaling for the solver: controls by actuator span,
        the interval length by its upper bound, states left alone.  Quasi-
        Newton inner solves have no scaling of their own, so strongly
        actuated systems (tens of N m against metre-scale states) need it."""
        s = np.ones(self.nz)
        span = np.maximum(np.abs(self.bounds.u_min), np.abs(self.bounds.u_max))
        span = np.where(np.isfinite(span) & (span > 0), span, 1.0)
        off = (self.K + 1) * self.nx
        s[off:off + self.K * self.nu] = np.tile(span, self.K)
        hi = self.bounds.dt_bounds[1]
        if np.isfinite(hi) and hi > 0:
            s[-1] = hi
        return s

    def initial_guess(self):
        """Pin-respecting straight-line seed: positions interpolate through
        every pinned value, rates are the finite differences, controls zero."""
        K, nx, nq = self.K, self.nx, self.nq
        b = self.bounds
        knots = np.arange(K + 1, dtype=float)
        Q = np.zeros((K + 1, nq))
        anchors = {j: [] for j in range(nq)}

        def note(k, vec, offset=0):
            v = np.asarray(vec, dtype=float)
            for j in range(min(v.size, nq)):
                if not np.isnan(v[j + offset] if offset else v[j]):
                    anchors[j].append((k, v[j + offset] if offset else v[j]))

        if b.x0 is not None:
            note(0, b.x0[:nq])
        if b.xf is not None:
            note(K, b.xf[:nq])
        for k, qpin in sorted(b.waypoints.items()):
            note(k, qpin)
        for j in range(nq):
            pts = sorted(anchors[j])
            if pts:
                ks = np.array([p[0] for p in pts], dtype=float)
                vs = np.array([p[1] for p in pts], dtype=float)
                Q[:, j] = np.interp(knots, ks, vs)
        dt = self.dt_init
        V = np.zeros((K + 1, nq))
        V[:-1] = np.diff(Q, axis=0) / dt
        V[-1] = V[-2] if K > 1 else 0.0
        X = np.hstack([Q, V])
        U = np.zeros((K, self.nu))
        lb, ub = self.box()
        return np.clip(self.pack(X, U, dt), lb, ub)

    def rollout_guess(self, rate_gain=None):
        """Dynamically consistent seed: forward-Euler rollout of a damping
        feedback on the rates (u = -gain * qd, clipped to the actuator
        bounds), so every defect row starts at zero and the trajectory
        already heads toward rest.  Needs a fully pinned initial state.

        Without a gain the rollout is passive (zero control)."""
        b = self.bounds
        if b.x0 is None or np.isnan(np.asarray(b.x0, dtype=float)).any():
            raise ConfigError("rollout guess needs a fully pinned initial state")
        dt = self.dt_init
        nq = self.nq
        X = np.empty((self.K + 1, self.nx))
        U = np.zeros((self.K, self.nu))
        X[0] = b.x0
        for k in range(self.K):
            if rate_gain is not None:
                U[k] = np.clip(-np.asarray(rate_gain) * X[k, nq:][:self.nu],
                               b.u_min, b.u_max)
            X[k + 1] = X[k] + dt * self.system.derivative(X[k], U[k])
        lb, ub = self.box()
        return np.clip(self.pack(X, U, dt), lb, ub)

    # objective and constraints ----------------------------------------------

    def objective(self, z):
        X, U, dt = self.unpack(z)
        W = self.weights.W_effort
        UW = U @ W
        effort = float(np.sum(UW * U))
        f = self.weights.w_time * self.K * dt + dt * effort
        g = np.zeros_like(z)
        gU = 2.0 * dt * UW
        off = (self.K + 1) * self.nx
        g[off:off + self.K * self.nu] = gU.ravel()
        g[-1] = self.weights.w_time * self.K + effort
        Wf = self.weights.W_terminal
        if Wf is not None:
            xN = X[-1]
            Wx = Wf @ xN
            f += float(xN @ Wx)
            g[self.K * self.nx:off] += 2.0 * Wx
        return f, g

    def _dyn_terms(self, z):
        key = z.tobytes()
        if self._cache_key != key:
            from .dynamics import fd_jacobians

            X, U, _ = self.unpack(z)
            acc = self.system.forward_dynamics(X[:-1], U)
            Aq, Bq = fd_jacobians(self.system.forward_dynamics, X[:-1], U)
            self._cache_key = key
            self._cache = (acc, Aq, Bq)
        return self._cache

    def defects(self, z):
        """Explicit-Euler defects, flattened (K, nx) -> (K*nx,)."""
        X, U, dt = self.unpack(z)
        nq = self.nq
        acc, _, _ = self._dyn_terms(z)
        cq = X[1:, :nq] - X[:-1, :nq] - dt * X[:-1, nq:]
        cv = X[1:, nq:] - X[:-1, nq:] - dt * acc
        return np.concatenate([cq, cv], axis=1).ravel()

    def defect_jtvp(self, z, y):
        """Transpose-Jacobian product of the defects with y."""
        X, U, dt = self.unpack(z)
        K, nx, nq, nu = self.K, self.nx, self.nq, self.nu
        acc, Aq, Bq = self._dyn_terms(z)
        Y = y.reshape(K, nx)
        yq, yv = Y[:, :nq], Y[:, nq:]

        gX = np.zeros((K + 1, nx))
        gX[1:, :nq] += yq
        gX[1:, nq:] += yv
        gX[:-1, :nq] -= yq
        gX[:-1, nq:] -= dt * yq
        gX[:-1, nq:] -= yv
        gX[:-1] -= dt * np.einsum("kij,ki->kj", Aq, yv)
        gU = -dt * np.einsum("kij,ki->kj", Bq, yv)
        gdt = -float(np.sum(X[:-1, nq:] * yq) + np.sum(acc * yv))
        out = np.empty_like(z)
        out[: (K + 1) * nx] = gX.ravel()
        out[(K + 1) * nx: (K + 1) * nx + K * nu] = gU.ravel()
        out[-1] = gdt
        return out


def transcribe(system, weights, bounds, n_intervals, dt_init=None) -> TranscribedProblem:
    return TranscribedProblem(system, weights, bounds, n_intervals, dt_init)


@dataclass
class SolveReport:
    converged: bool
    outer_iters: int
    inner_iters: int
    penalty: float
    feasibility: float
    stationarity: float
    objective: float
    feas_trace: list


@dataclass
class SolveResult:
    trajectory: Trajectory
    report: SolveReport


def solve(problem: TranscribedProblem, z0=None, options: AlOptions | None = None,
          feas_accept: float = 1e-6) -> SolveResult:
    """Solve the transcribed problem; raise SolverError if the best iterate
    fails the independent feasibility check."""
    opt = options or AlOptions()
    lb, ub = problem.box()
    if z0 is None:
        z0 = problem.initial_guess()
    s = problem.var_scale()

    def objective_s(zh):
        f, g = problem.objective(zh * s)
        return f, g * s

    def defects_s(zh):
        return problem.defects(zh * s)

    def jtvp_s(zh, y):
        return problem.defect_jtvp(zh * s, y) * s

    res = solve_auglag(objective_s, defects_s, jtvp_s,
                       lb / s, ub / s, np.asarray(z0, dtype=float) / s, opt)
    res.z = res.z * s
    X, U, dt = problem.unpack(res.z)
    traj = Trajectory(dt=dt, xs=X, us=U)
    report = SolveReport(converged=res.converged, outer_iters=res.outer_iters,
                         inner_iters=res.inner_iters, penalty=res.penalty,
                         feasibility=res.feasibility, stationarity=res.stationarity,
                         objective=res.objective, feas_trace=res.feas_trace)
    check = check_feasibility(problem.system, traj, problem.bounds)
    if check.max_violation > feas_accept:
        raise SolverError(
            f"optimization stalled: defect {check.max_defect:.3e}, "
            f"bound violation {check.max_bound_violation:.3e}, "
            f"pin violation {check.max_pin_violation:.3e}",
            best=traj, report=report)
    return SolveResult(trajectory=traj, report=report)


def euler_defects(system, traj: Trajectory) -> np.ndarray:
    """Euler integration residuals per interval, shape (K, nx)."""
    nq = traj.state_dim // 2
    X, U, dt = traj.xs, traj.us, traj.dt
    acc = system.forward_dynamics(X[:-1], U)
    cq = X[1:, :nq] - X[:-1, :nq] - dt * X[:-1, nq:]
    cv = X[1:, nq:] - X[:-1, nq:] - dt * acc
    return np.concatenate([cq, cv], axis=1)


@dataclass
class FeasibilityReport:
    max_defect: float
    max_bound_violation: float
    max_pin_violation: float

    @property
    def max_violation(self) -> float:
        return max(self.max_defect, self.max_bound_violation, self.max_pin_violation)


def check_feasibility(system, traj: Trajectory, bounds: TrajBounds) -> FeasibilityReport:
    """Evaluate a trajectory against the problem data directly.

    Independent of the solver and of the decision-vector packing, so it can
    audit any trajectory, including ones loaded from disk.
    """
    nq = traj.state_dim // 2
    defect = float(np.max(np.abs(euler_defects(system, traj))))

    bv = 0.0
    X, U = traj.xs, traj.us
    bv = max(bv, float(np.max(np.maximum(bounds.u_min - U, 0.0), initial=0.0)))
    bv = max(bv, float(np.max(np.maximum(U - bounds.u_max, 0.0), initial=0.0)))
    for lim, sl, sign in ((bounds.q_min, slice(0, nq), -1), (bounds.q_max, slice(0, nq), 1),
                          (bounds.qd_min, slice(nq, None), -1), (bounds.qd_max, slice(nq, None), 1)):
        if lim is not None:
            gap = sign * (X[:, sl] - lim)
            bv = max(bv, float(np.max(np.maximum(gap, 0.0), initial=0.0)))
    lo, hi = bounds.dt_bounds
    bv = max(bv, max(lo - traj.dt, 0.0), max(traj.dt - hi, 0.0))

    pv = 0.0

    def pin_err(row, values):
        v = np.asarray(values, dtype=float)
        keep = ~np.isnan(v)
        if not np.any(keep):
            return 0.0
        return float(np.max(np.abs(row[: v.size][keep] - v[keep])))

    if bounds.x0 is not None:
        pv = max(pv, pin_err(X[0], bounds.x0))
    if bounds.xf is not None:
        pv = max(pv, pin_err(X[-1], bounds.xf))
    for k, qpin in bounds.waypoints.items():
        pv = max(pv, pin_err(X[k], qpin))
    return FeasibilityReport(max_defect=defect, max_bound_violation=bv,
                             max_pin_violation=pv)
