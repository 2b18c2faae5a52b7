"""Planar free-floating multibody dynamics.

A rigid base (CoM position x, y and orientation theta) carries a serial
chain of revolute-jointed links in the plane.  Generalized coordinates are
q = [x, y, theta, q_1 .. q_n] with joint angles measured relative to the
preceding body.  There is no gravity and no contact: the only fundamental
forces are the actuator inputs, so linear and angular momentum of the
assembly are conserved under zero input.

All evaluation routines accept either a single configuration (1-d arrays)
or a batch with an arbitrary leading dimension, and the two code paths are
cross-checked in the test suite.  The single-state path is tuned for tight
integration loops, the batched path for linearization and Monte Carlo
rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError


def _perp(v):
    """Rotate 2-vectors by +90 degrees (last axis)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class Link:
    """One arm link: mass, rotational inertia about its CoM, joint-to-joint
    length, and the CoM offset from the inboard joint along the link axis."""

    mass: float
    inertia: float
    length: float
    com: float


@dataclass(frozen=True)
class Payload:
    """Rigid body grasped at the tip of the last link.

    The payload CoM sits ``offset`` beyond the tip along the link axis and
    the body is folded into the last link's mass properties, so a grasped
    payload costs nothing at evaluation time.
    """

    mass: float
    inertia: float
    offset: float = 0.0


@dataclass(frozen=True)
class MultibodyModel:
    """Planar free-floating base with an optional serial arm.

    ``arm_mount`` is the offset of the first joint from the base CoM along
    the base x axis.  With no links the model reduces to a single rigid
    body with constant diagonal mass matrix diag(m, m, I).
    """

    base_mass: float
    base_inertia: float
    links: tuple[Link, ...] = ()
    payload: Payload | None = None
    arm_mount: float = 0.0

    def __post_init__(self):
        if self.base_mass <= 0 or self.base_inertia <= 0:
            raise ConfigError("base mass and inertia must be positive")
        for lk in self.links:
            if lk.mass <= 0 or lk.inertia <= 0:
                raise ConfigError("link masses and inertias must be positive")
            if lk.length < 0:
                raise ConfigError("link lengths must be non-negative")
        if self.payload is not None and not self.links:
            raise ConfigError("a payload requires at least one link")
        if self.payload is not None and self.payload.mass <= 0:
            raise ConfigError("payload mass must be positive")

        n = len(self.links)
        m = np.empty(n + 1)
        inr = np.empty(n + 1)
        m[0], inr[0] = self.base_mass, self.base_inertia
        lengths = np.array([lk.length for lk in self.links])
        coms = np.array([lk.com for lk in self.links])
        for i, lk in enumerate(self.links):
            m[i + 1], inr[i + 1] = lk.mass, lk.inertia
        if self.payload is not None:
            # Fold the grasped body into the last link (parallel axis).
            p = self.payload
            grasp = lengths[-1] + p.offset
            mt = m[-1] + p.mass
            ct = (m[-1] * coms[-1] + p.mass * grasp) / mt
            inr[-1] += m[-1] * (ct - coms[-1]) ** 2 + p.inertia + p.mass * (grasp - ct) ** 2
            m[-1] = mt
            coms[-1] = ct

        d = 3 + n
        # Body angular rates are omega = G qdot; G is constant.
        G = np.zeros((n + 1, d))
        G[:, 2] = 1.0
        for i in range(1, n + 1):
            G[i, 3:3 + i] = 1.0
        mrot = G.T @ (inr[:, None] * G)
        mrot = 0.5 * (mrot + mrot.T)

        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_inr", inr)
        object.__setattr__(self, "_l", lengths)
        object.__setattr__(self, "_c", coms)
        object.__setattr__(self, "_G", G)
        object.__setattr__(self, "_mrot", mrot)

    # dimensions -----------------------------------------------------------

    @property
    def n_joints(self) -> int:
        return len(self.links)

    @property
    def dof(self) -> int:
        return 3 + len(self.links)

    @property
    def state_dim(self) -> int:
        return 2 * self.dof

    @property
    def control_dim(self) -> int:
        return self.dof

    @property
    def total_mass(self) -> float:
        return float(self._m.sum())

    # kinematics -----------------------------------------------------------

    def _kin_single(self, q):
        """Joint positions p (n,2) and body CoM positions r (n+1,2)."""
        n = self.n_joints
        r = np.empty((n + 1, 2))
        r[0] = q[:2]
        if n == 0:
            return None, r
        th = q[2]
        phi = th + np.cumsum(q[3:])
        e = np.empty((n, 2))
        e[:, 0] = np.cos(phi)
        e[:, 1] = np.sin(phi)
        p = np.empty((n, 2))
        p[0, 0] = q[0] + self.arm_mount * np.cos(th)
        p[0, 1] = q[1] + self.arm_mount * np.sin(th)
        if n > 1:
            p[1:] = p[0] + np.cumsum(self._l[:-1, None] * e[:-1], axis=0)
        r[1:] = p + self._c[:, None] * e
        return p, r

    def _kin_batch(self, q):
        n = self.n_joints
        B = q.shape[0]
        r = np.empty((B, n + 1, 2))
        r[:, 0] = q[:, :2]
        if n == 0:
            return None, r
        th = q[:, 2]
        phi = th[:, None] + np.cumsum(q[:, 3:], axis=1)
        e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)  # (B,n,2)
        p = np.empty((B, n, 2))
        p[:, 0, 0] = q[:, 0] + self.arm_mount * np.cos(th)
        p[:, 0, 1] = q[:, 1] + self.arm_mount * np.sin(th)
        if n > 1:
            p[:, 1:] = p[:, :1] + np.cumsum(self._l[None, :-1, None] * e[:, :-1], axis=1)
        r[:, 1:] = p + self._c[None, :, None] * e
        return p, r

    def _jac_single(self, p, r):
        """CoM translational Jacobians, (n+1, 2, dof)."""
        n, d = self.n_joints, self.dof
        J = np.zeros((n + 1, 2, d))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        J[:, :, 2] = _perp(r - r[0])
        for k in range(n):
            J[k + 1:, :, 3 + k] = _perp(r[k + 1:] - p[k])
        return J

    def _jac_batch(self, p, r):
        n, d = self.n_joints, self.dof
        B = r.shape[0]
        J = np.zeros((B, n + 1, 2, d))
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., :, 2] = _perp(r - r[:, :1])
        for k in range(n):
            J[:, k + 1:, :, 3 + k] = _perp(r[:, k + 1:] - p[:, k:k + 1])
        return J

    # dynamics -------------------------------------------------------------

    def mass_matrix(self, q):
        """Joint-space mass matrix M(q), symmetric positive definite.

        The 3x3 upper-left block is the base block, the lower-right the arm
        block, and the off-diagonal block couples the two.
        """
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.dof:
            raise ValueError(f"expected {self.dof} coordinates, got {q.shape[-1]}")
        if self.n_joints == 0:
            diag = np.array([self.base_mass, self.base_mass, self.base_inertia])
            M = np.zeros(q.shape[:-1] + (3, 3))
            M[..., [0, 1, 2], [0, 1, 2]] = diag
            return M
        if q.ndim == 1:
            p, r = self._kin_single(q)
            J = self._jac_single(p, r)
            M = np.einsum("i,iad,iae->de", self._m, J, J) + self._mrot
            return 0.5 * (M + M.T)  # exact symmetry regardless of reduction order
        lead = q.shape[:-1]
        p, r = self._kin_batch(q.reshape(-1, self.dof))
        J = self._jac_batch(p, r)
        M = np.einsum("bi,biad,biae->bde", np.broadcast_to(self._m, J.shape[:2]), J, J)
        M += self._mrot
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
        return M.reshape(lead + (self.dof, self.dof))

    def bias_forces(self, q, qd):
        """Coriolis/centrifugal generalized forces C(q, qdot)."""
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        if q.shape != qd.shape or q.shape[-1] != self.dof:
            raise ValueError("configuration and rate must both have dof entries")
        if self.n_joints == 0:
            return np.zeros_like(q)
        if q.ndim == 1:
            return self._bias_single(q, qd)
        lead = q.shape[:-1]
        out = self._bias_batch(q.reshape(-1, self.dof), qd.reshape(-1, self.dof))
        return out.reshape(lead + (self.dof,))

    def _bias_single(self, q, qd):
        n = self.n_joints
        p, r = self._kin_single(q)
        J = self._jac_single(p, r)
        om = self._G @ qd
        # Centripetal CoM accelerations at zero joint acceleration.
        a = np.empty((n, 2))
        ap = -om[0] ** 2 * (p[0] - r[0])
        for k in range(n):
            a[k] = ap - om[k + 1] ** 2 * (r[k + 1] - p[k])
            if k + 1 < n:
                ap = ap - om[k + 1] ** 2 * (p[k + 1] - p[k])
        return np.einsum("iad,ia->d", J[1:], self._m[1:, None] * a)

    def _bias_batch(self, q, qd):
        n = self.n_joints
        p, r = self._kin_batch(q)
        J = self._jac_batch(p, r)
        om = qd @ self._G.T  # (B, n+1)
        a = np.empty_like(p)
        ap = -om[:, :1] ** 2 * (p[:, 0] - r[:, 0])
        for k in range(n):
            a[:, k] = ap - om[:, k + 1:k + 2] ** 2 * (r[:, k + 1] - p[:, k])
            if k + 1 < n:
                ap = ap - om[:, k + 1:k + 2] ** 2 * (p[:, k + 1] - p[:, k])
        return np.einsum("biad,bia->bd", J[:, 1:], self._m[None, 1:, None] * a)

    def forward_dynamics(self, x, u):
        """Joint accelerations from state x = [q, qdot] and input u."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        d = self.dof
        if x.shape[-1] != 2 * d or u.shape[-1] != d:
            raise ValueError("state must have 2*dof entries and input dof entries")
        q, qd = x[..., :d], x[..., d:]
        if self.n_joints == 0:
            diag = np.array([self.base_mass, self.base_mass, self.base_inertia])
            return u / diag
        M = self.mass_matrix(q)
        rhs = u - self.bias_forces(q, qd)
        try:
            return np.linalg.solve(M, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            cond = np.linalg.cond(M if M.ndim == 2 else M.reshape(-1, d, d))
            raise NumericalError(
                f"mass matrix numerically singular (cond={np.max(cond):.3e})"
            ) from None

    def derivative(self, x, u):
        """State derivative [qdot, qddot]."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape[0] == 1:
            # route single-row batches through the scalar path (integration
            # loops sit on this call)
            u = np.asarray(u, dtype=float)
            return self.derivative(x[0], u[0] if u.ndim == 2 else u)[None]
        qdd = self.forward_dynamics(x, u)
        return np.concatenate([x[..., self.dof:], qdd], axis=-1)

    # aggregate quantities ---------------------------------------------------

    def momentum(self, x):
        """Angular momentum L about the system CoM and linear momentum P.

        Both are conserved for any zero-input motion; L is taken about the
        instantaneous assembly CoM so that conservation holds even when the
        assembly translates.
        """
        x = np.asarray(x, dtype=float)
        d = self.dof
        q, qd = x[..., :d], x[..., d:]
        M = self.mass_matrix(q)
        h = np.einsum("...de,...e->...d", M, qd)
        P = h[..., :2]
        rc = self.center_of_mass(q)
        L = h[..., 2] - _cross2(rc - q[..., :2], P)
        return L, P

    def kinetic_energy(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dof
        q, qd = x[..., :d], x[..., d:]
        M = self.mass_matrix(q)
        return 0.5 * np.einsum("...d,...de,...e->...", qd, M, qd)

    def body_coms(self, q):
        """CoM positions of base and links, shape (..., n+1, 2)."""
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            return self._kin_single(q)[1]
        lead = q.shape[:-1]
        r = self._kin_batch(q.reshape(-1, self.dof))[1]
        return r.reshape(lead + r.shape[1:])

    def center_of_mass(self, q):
        r = self.body_coms(q)
        return np.einsum("...ia,i->...a", r, self._m) / self.total_mass

    def locked_inertia(self, q):
        """Rotational inertia of the instantaneously rigid assembly about
        its CoM."""
        r = self.body_coms(q)
        rc = np.einsum("...ia,i->...a", r, self._m) / self.total_mass
        dr = r - rc[..., None, :]
        return self._inr.sum() + np.einsum("i,...i->...", self._m, np.sum(dr * dr, axis=-1))


@dataclass(frozen=True)
class PointMass:
    """Decoupled double integrators, one per coordinate.

    Shares the evaluation interface of MultibodyModel so that the
    optimization, stabilization, and estimation layers can run on cheap toy
    systems.
    """

    masses: tuple[float, ...]

    def __post_init__(self):
        if any(m <= 0 for m in self.masses):
            raise ConfigError("masses must be positive")
        object.__setattr__(self, "_diag", np.asarray(self.masses, dtype=float))

    @property
    def dof(self) -> int:
        return len(self.masses)

    @property
    def state_dim(self) -> int:
        return 2 * len(self.masses)

    @property
    def control_dim(self) -> int:
        return len(self.masses)

    def mass_matrix(self, q):
        q = np.asarray(q, dtype=float)
        M = np.zeros(q.shape[:-1] + (self.dof, self.dof))
        M[..., range(self.dof), range(self.dof)] = self._diag
        return M

    def bias_forces(self, q, qd):
        return np.zeros_like(np.asarray(q, dtype=float))

    def forward_dynamics(self, x, u):
        return np.asarray(u, dtype=float) / self._diag

    def derivative(self, x, u):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[..., self.dof:], self.forward_dynamics(x, u)], axis=-1)


# linearization --------------------------------------------------------------


@dataclass(frozen=True)
class Linearization:
    """Knot-point Jacobians of the state derivative along a trajectory."""

    ts: np.ndarray
    A: np.ndarray  # (K+1, nx, nx)
    B: np.ndarray  # (K+1, nx, nu)


def fd_jacobians(fun, X, U, rel_step=1e-6):
    """Central-difference Jacobians of fun(x, u) at a batch of points.

    fun must accept batched inputs.  Steps are relative per component,
    h_i = rel_step * (1 + |z_i|).  Returns (A, B) with shapes
    (K, nf, nx) and (K, nf, nu).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    K, nx = X.shape
    nu = U.shape[1]

    def _jac(Z, other, wrt_x):
        n = Z.shape[1]
        h = rel_step * (1.0 + np.abs(Z))  # (K, n)
        Zp = np.repeat(Z[None], n, axis=0).copy()  # (n, K, n)
        Zm = Zp.copy()
        idx = np.arange(n)
        Zp[idx, :, idx] += h.T
        Zm[idx, :, idx] -= h.T
        Zfull = np.concatenate([Zp, Zm], axis=0).reshape(2 * n * K, n)
        Ofull = np.broadcast_to(other, (2 * n,) + other.shape).reshape(2 * n * K, -1)
        if wrt_x:
            F = fun(Zfull, Ofull)
        else:
            F = fun(Ofull, Zfull)
        nf = F.shape[-1]
        F = F.reshape(2, n, K, nf)
        D = (F[0] - F[1]) / (2.0 * h.T[:, :, None])  # (n, K, nf)
        return np.moveaxis(D, 0, 2)  # (K, nf, n)

    A = _jac(X, U, wrt_x=True)
    B = _jac(U, X, wrt_x=False)
    return A, B


def linearize_points(system, X, U, rel_step=1e-6):
    """Jacobians A = df/dx, B = df/du of the state derivative."""
    return fd_jacobians(system.derivative, X, U, rel_step)


def linearize(system, trajectory, rel_step=1e-6) -> Linearization:
    """Linearize the dynamics about every knot of a trajectory.

    The control at the final knot is the zero-order-hold extension of the
    last interval's control.
    """
    U = np.vstack([trajectory.us, trajectory.us[-1]])
    A, B = linearize_points(system, trajectory.xs, U, rel_step)
    return Linearization(ts=trajectory.times, A=A, B=B)
