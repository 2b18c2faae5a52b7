"""Time-varying LQR stabilization along a nominal trajectory.

The backward Riccati sweep integrates

    -dS/dt = S A(t) + A(t)' S - S B(t) R^-1 B(t)' S + Q

from a terminal value (by default the algebraic Riccati solution at the
final knot) with fixed-step RK4, interpolating the knot Jacobians linearly
in time.  Gains are K_k = R^-1 B_k' S_k; the feedback policy holds gains
and nominal controls over each interval while interpolating the nominal
state linearly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError
from .trajopt import Trajectory

POLICY_FORMAT_VERSION = 1


def solve_care(A, B, Q, R, residual_tol=1e-8):
    """Stabilizing solution of the continuous algebraic Riccati equation.

    The residual |A'S + SA - S B R^-1 B' S + Q|_max must come out below
    residual_tol * max(1, |Q|_max); a Newton (Lyapunov) cleanup iteration
    runs if the direct solve is not accurate enough.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    S = scipy.linalg.solve_continuous_are(A, B, Q, R)
    S = 0.5 * (S + S.T)
    scale = max(1.0, float(np.max(np.abs(Q))))

    def resid(Sm):
        return A.T @ Sm + Sm @ A - Sm @ B @ np.linalg.solve(R, B.T @ Sm) + Q

    for _ in range(3):
        if np.max(np.abs(resid(S))) <= residual_tol * scale:
            return S
        # Newton step: solve the Lyapunov equation of the closed-loop matrix.
        K = np.linalg.solve(R, B.T @ S)
        Acl = A - B @ K
        S = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        S = 0.5 * (S + S.T)
    if np.max(np.abs(resid(S))) > residual_tol * scale:
        raise NumericalError("algebraic Riccati solve did not meet the residual tolerance")
    return S


def _validate_weights(Q, R, nx, nu):
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.shape != (nx, nx):
        raise ConfigError(f"Q must be {nx}x{nx}")
    if R.shape != (nu, nu):
        raise ConfigError(f"R must be {nu}x{nu}")
    if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) < -1e-12 * max(1, np.max(np.abs(Q)))):
        raise ConfigError("Q must be positive semidefinite")
    try:
        np.linalg.cholesky(0.5 * (R + R.T))
    except np.linalg.LinAlgError:
        raise ConfigError("R must be positive definite") from None
    return 0.5 * (Q + Q.T), 0.5 * (R + R.T)


@dataclass(frozen=True)
class TvlqrPolicy:
    """Feedback policy around a nominal trajectory.

    ts, xs, us are the nominal knots; S and K hold the cost-to-go matrices
    and gains at every knot (the final gain closes the loop around the
    terminal linearization and is what a hand-off controller would hold
    after the horizon).
    """

    ts: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    S: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.ts[1] - self.ts[0])

    @property
    def n_intervals(self) -> int:
        return len(self.ts) - 1

    @property
    def state_dim(self) -> int:
        return self.xs.shape[1]

    @property
    def control_dim(self) -> int:
        return self.us.shape[1]

    @property
    def duration(self) -> float:
        return float(self.ts[-1])

    def trajectory(self) -> Trajectory:
        return Trajectory(dt=self.dt, xs=self.xs, us=self.us)

    def segment(self, t: float) -> int:
        return int(np.clip(np.floor(t / self.dt + 1e-9), 0, self.n_intervals - 1))

    def reference(self, t: float) -> np.ndarray:
        """Nominal state at time t, linear between knots."""
        k = self.segment(t)
        a = np.clip((t - self.ts[k]) / self.dt, 0.0, 1.0)
        return (1.0 - a) * self.xs[k] + a * self.xs[k + 1]

    def feedback(self, t, x, u_min=None, u_max=None, segment=None):
        """Control at (t, x): held nominal minus gain times state deviation,
        optionally clamped to actuator limits.  Accepts state batches.

        At a knot boundary the held control and gain jump; segment picks
        which interval's piece applies there (integrators evaluating the
        closing stage of a step need the left limit).
        """
        k = self.segment(t) if segment is None else segment
        dx = np.asarray(x, dtype=float) - self.reference(t)
        u = self.us[k] - dx @ self.K[k].T
        if u_min is not None:
            u = np.maximum(u, u_min)
        if u_max is not None:
            u = np.minimum(u, u_max)
        return u

    def knot_cost(self, k, x):
        """Quadratic cost-to-go (x - x_k)' S_k (x - x_k); batched in x."""
        dx = np.asarray(x, dtype=float) - self.xs[k]
        return np.einsum("...i,ij,...j->...", dx, self.S[k], dx)

    def cost_to_go(self, t, x):
        """Cost-to-go at time t with the segment's held S matrix."""
        if t >= self.ts[-1]:
            return self.knot_cost(self.n_intervals, x)
        k = self.segment(t)
        dx = np.asarray(x, dtype=float) - self.reference(t)
        return np.einsum("...i,ij,...j->...", dx, self.S[k], dx)


def _riccati_rate(S, A, Bq):
    # Bq = B R^-1 B'
    return -(S @ A + A.T @ S - S @ Bq @ S)


def solve_tvlqr(trajectory: Trajectory, linearization, Q, R, Qf=None,
                substeps: int = 10) -> TvlqrPolicy:
    """Backward Riccati sweep along a trajectory's linearization."""
    nx, nu = trajectory.state_dim, trajectory.control_dim
    Q, R = _validate_weights(Q, R, nx, nu)
    A, B = linearization.A, linearization.B
    Kn = trajectory.n_intervals
    if A.shape != (Kn + 1, nx, nx) or B.shape != (Kn + 1, nx, nu):
        raise ConfigError("linearization does not match the trajectory dimensions")
    if np.max(np.abs(linearization.ts - trajectory.times)) > 1e-9:
        raise ConfigError("linearization knot times do not match the trajectory")
    if substeps < 1:
        raise ConfigError("substeps must be at least 1")

    if Qf is None:
        Sf = solve_care(A[-1], B[-1], Q, R)
    else:
        Sf = 0.5 * (np.asarray(Qf, dtype=float) + np.asarray(Qf, dtype=float).T)
        if Sf.shape != (nx, nx):
            raise ConfigError(f"Qf must be {nx}x{nx}")
        if np.any(np.linalg.eigvalsh(Sf) < -1e-12 * max(1, np.max(np.abs(Sf)))):
            raise ConfigError("Qf must be positive semidefinite")

    Rinv = np.linalg.inv(R)
    Bq = np.einsum("kij,jl,kml->kim", B, Rinv, B)  # B R^-1 B' per knot
    Bq = 0.5 * (Bq + np.swapaxes(Bq, -1, -2))
    dt = trajectory.dt

    # Explicit integration goes unstable when the closed-loop dynamics are
    # stiff relative to the substep (the Riccati perturbation operator has
    # eigenvalues twice those of A - B K).  Refine the resolution so
    # h * (fastest mode) stays well inside the RK4 stability region; the
    # passed substeps acts as a floor.
    ev = np.linalg.eigvals(A - Bq @ Sf)
    stiffest = float(np.max(np.abs(ev.real)))
    substeps = max(substeps, int(np.ceil(3.0 * stiffest * dt)))
    h = dt / substeps

    guard = 1e6 * max(1.0, float(np.max(np.abs(Sf))))
    S = np.empty((Kn + 1, nx, nx))
    S[Kn] = Sf
    for k in range(Kn - 1, -1, -1):
        Sk = S[k + 1]
        dA = A[k + 1] - A[k]
        dBq = Bq[k + 1] - Bq[k]

        def at(tau):  # tau in [0, 1] across the interval
            return A[k] + tau * dA, Bq[k] + tau * dBq

        for s in range(substeps):
            # integrate backward from the right edge of the interval
            tau1 = 1.0 - s * h / dt
            tau_m = tau1 - 0.5 * h / dt
            tau0 = tau1 - h / dt
            A1, Bq1 = at(tau1)
            Am, Bqm = at(tau_m)
            A0, Bq0 = at(tau0)
            k1 = _riccati_rate(Sk, A1, Bq1) - Q
            k2 = _riccati_rate(Sk - 0.5 * h * k1, Am, Bqm) - Q
            k3 = _riccati_rate(Sk - 0.5 * h * k2, Am, Bqm) - Q
            k4 = _riccati_rate(Sk - h * k3, A0, Bq0) - Q
            Sk = Sk - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            Sk = 0.5 * (Sk + Sk.T)
        if not np.all(np.isfinite(Sk)) or np.max(np.abs(Sk)) > guard:
            raise NumericalError(
                "backward Riccati integration is blowing up; "
                "increase substeps or soften the weights")
        S[k] = Sk

    floor = -1e-8 * max(1.0, float(np.max(np.abs(S))))
    if np.min(np.linalg.eigvalsh(S)) < floor:
        raise NumericalError(
            "Riccati integration produced an indefinite cost matrix; "
            "increase substeps or refine the trajectory")

    gains = np.einsum("ij,kli,klm->kjm", Rinv, B, S)
    return TvlqrPolicy(ts=trajectory.times.copy(), xs=trajectory.xs.copy(),
                       us=trajectory.us.copy(), S=S, K=gains, Q=Q, R=R)


# serialization ---------------------------------------------------------------


def save_policy(policy: TvlqrPolicy, path) -> None:
    """JSON with row-major flattened matrices per knot."""
    doc = {
        "version": POLICY_FORMAT_VERSION,
        "state_dim": policy.state_dim,
        "control_dim": policy.control_dim,
        "ts": policy.ts.tolist(),
        "xs": policy.xs.tolist(),
        "us": policy.us.tolist(),
        "S": policy.S.reshape(len(policy.ts), -1).tolist(),
        "K": policy.K.reshape(len(policy.ts), -1).tolist(),
        "Q": policy.Q.ravel().tolist(),
        "R": policy.R.ravel().tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_policy(path) -> TvlqrPolicy:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != POLICY_FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported policy format version {doc.get('version')}")
    try:
        nx = int(doc["state_dim"])
        nu = int(doc["control_dim"])
        ts = np.asarray(doc["ts"], dtype=float)
        n = len(ts)
        return TvlqrPolicy(
            ts=ts,
            xs=np.asarray(doc["xs"], dtype=float).reshape(n, nx),
            us=np.asarray(doc["us"], dtype=float).reshape(n - 1, nu),
            S=np.asarray(doc["S"], dtype=float).reshape(n, nx, nx),
            K=np.asarray(doc["K"], dtype=float).reshape(n, nu, nx),
            Q=np.asarray(doc["Q"], dtype=float).reshape(nx, nx),
            R=np.asarray(doc["R"], dtype=float).reshape(nu, nu),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed policy file ({exc})") from None
