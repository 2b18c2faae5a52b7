"""Time-varying ellipsoidal stability region around a trajectory.

A funnel pairs each knot with a shape matrix S_k and a threshold rho_k; the
region at knot k is {x | (x - x_k)' S_k (x - x_k) < rho_k}.  Thresholds may
be infinite at knots the estimator never shrank.  Funnels are immutable and
every query is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, IndeterminateError

FUNNEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Funnel:
    """Per-knot (S, rho) pairs around a nominal trajectory.

    ``xs`` holds the nominal knot states the ellipsoids are centered on;
    it may be None for a funnel loaded without its trajectory, in which
    case queries treat inputs as deviations from the nominal.
    ``history`` optionally carries the estimation shrink log; it is not
    serialized and does not affect any query.
    """

    ts: np.ndarray
    S: np.ndarray
    rho: np.ndarray
    trajectory_id: str = ""
    xs: np.ndarray | None = None
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        S = np.asarray(self.S, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "rho", rho)
        n = len(ts)
        if S.shape[:1] != (n,) or S.ndim != 3 or S.shape[1] != S.shape[2]:
            raise ConfigError("funnel needs one square shape matrix per knot")
        if rho.shape != (n,):
            raise ConfigError("funnel needs one threshold per knot")
        if np.any(rho <= 0) or np.any(np.isnan(rho)):
            raise ConfigError("thresholds must be positive or infinite")
        if np.max(np.abs(S - np.swapaxes(S, 1, 2))) > 1e-9 * max(1.0, np.max(np.abs(S))):
            raise ConfigError("shape matrices must be symmetric")
        if np.min(np.linalg.eigvalsh(S)) < -1e-9 * max(1.0, np.max(np.abs(S))):
            raise ConfigError("shape matrices must be positive semidefinite")
        if self.xs is not None:
            xs = np.asarray(self.xs, dtype=float)
            if xs.shape != (n, S.shape[1]):
                raise ConfigError("nominal states do not match the funnel knots")
            object.__setattr__(self, "xs", xs)

    @property
    def n_knots(self) -> int:
        return len(self.ts)

    @property
    def state_dim(self) -> int:
        return self.S.shape[1]

    def center(self, k: int) -> np.ndarray:
        if self.xs is None:
            return np.zeros(self.state_dim)
        return self.xs[k]

    def value(self, k: int, x) -> np.ndarray:
        """Quadratic form (x - x_k)' S_k (x - x_k); batched in x."""
        self._check_knot(k)
        dx = np.asarray(x, dtype=float) - self.center(k)
        return np.einsum("...i,ij,...j->...", dx, self.S[k], dx)

    def _check_knot(self, k: int) -> None:
        if not -self.n_knots <= k < self.n_knots:
            raise ConfigError(f"knot {k} out of range for {self.n_knots} knots")

    def volume_proxy(self, k: int = 0) -> float:
        """sqrt(det(rho_k * S_k^-1)), proportional to the ellipsoid volume."""
        self._check_knot(k)
        if np.isinf(self.rho[k]):
            return np.inf
        sign, logdet = np.linalg.slogdet(self.S[k])
        if sign <= 0:
            return np.inf
        n = self.state_dim
        return float(np.exp(0.5 * (n * np.log(self.rho[k]) - logdet)))


def contains(funnel: Funnel, k: int, x) -> bool | np.ndarray:
    """Strict membership of x in the funnel's knot-k ellipsoid."""
    funnel._check_knot(k)
    if np.isinf(funnel.rho[k]):
        v = np.isfinite(funnel.value(k, x))
    else:
        v = funnel.value(k, x) < funnel.rho[k]
    return bool(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class Ellipse2D:
    """A planar slice {y | (y - center)' S (y - center) < rho}."""

    center: np.ndarray
    S: np.ndarray
    rho: float

    def semi_axes(self):
        """(lengths, directions): columns of directions are the axes."""
        w, V = np.linalg.eigh(self.S)
        return np.sqrt(self.rho / w), V

    def boundary(self, n: int = 128) -> np.ndarray:
        """(n, 2) polyline tracing the boundary."""
        ang = np.linspace(0.0, 2.0 * np.pi, n)
        circ = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        lengths, V = self.semi_axes()
        return self.center + circ @ (V * lengths).T

    @property
    def area(self) -> float:
        return float(np.pi * self.rho / np.sqrt(np.linalg.det(self.S)))

    def contains(self, y) -> bool | np.ndarray:
        d = np.asarray(y, dtype=float) - self.center
        v = np.einsum("...i,ij,...j->...", d, self.S, d) < self.rho
        return bool(v) if np.ndim(v) == 0 else v


def project(funnel: Funnel, k: int, axes) -> Ellipse2D:
    """Slice of the knot-k ellipsoid onto two state coordinates.

    All remaining coordinates are pinned at their nominal values, so this
    is the cross-section through the center, not the shadow: membership of
    a 2-d point embedded at nominal coordinates matches contains() exactly.
    """
    funnel._check_knot(k)
    i, j = axes
    if i == j or not (0 <= i < funnel.state_dim and 0 <= j < funnel.state_dim):
        raise ConfigError(f"invalid projection axes {axes}")
    if np.isinf(funnel.rho[k]):
        raise IndeterminateError(
            f"knot {k} was never shrunk (rho is infinite); skip unshrunk knots")
    sub = funnel.S[k][np.ix_([i, j], [i, j])]
    c = funnel.center(k)[[i, j]]
    return Ellipse2D(center=c, S=sub, rho=float(funnel.rho[k]))


def containment_margin(upstream: Funnel, downstream: Funnel) -> float:
    """Signed margin of the upstream outlet fitting in the downstream inlet.

    Concentric case: sqrt(rho_b) - sqrt(rho_a * lambda_max(S_a^-1 S_b)),
    which is exact (non-negative iff contained).  Offset centers add the
    downstream-metric distance between centers, a sufficient (conservative)
    triangle-inequality test.  Margins are in units of sqrt(cost).
    """
    if upstream.state_dim != downstream.state_dim:
        raise ConfigError("funnels live in different state spaces")
    rho_a = float(upstream.rho[-1])
    rho_b = float(downstream.rho[0])
    if np.isinf(rho_a) or np.isinf(rho_b):
        raise IndeterminateError(
            "containment is indeterminate with an infinite threshold")
    Sa, Sb = upstream.S[-1], downstream.S[0]
    try:
        lam = float(scipy.linalg.eigh(Sb, Sa, eigvals_only=True,
                                      subset_by_index=(upstream.state_dim - 1,
                                                       upstream.state_dim - 1))[0])
    except scipy.linalg.LinAlgError:
        raise ConfigError("outlet shape matrix must be positive definite") from None
    reach = np.sqrt(rho_a * max(lam, 0.0))
    d = upstream.center(-1) - downstream.center(0)
    dist = float(np.sqrt(d @ Sb @ d))
    return float(np.sqrt(rho_b) - reach - dist)


def composable(upstream: Funnel, downstream: Funnel) -> bool:
    """True when every state in the upstream outlet is in the downstream
    inlet (exact for concentric funnels, sufficient otherwise).  Ties are
    resolved as contained: equal closed ellipsoids compose."""
    tol = 1e-12 * np.sqrt(float(downstream.rho[0]))
    return containment_margin(upstream, downstream) >= -tol


# serialization ----------------------------------------------------------------


def save_funnel(funnel: Funnel, path) -> None:
    """JSON with row-major shape matrices; infinite thresholds become the
    string "inf".  Nominal states are not stored; reload with the
    generating trajectory to restore centered queries."""
    doc = {
        "version": FUNNEL_FORMAT_VERSION,
        "trajectory_id": funnel.trajectory_id,
        "knot_times": funnel.ts.tolist(),
        "rho": [("inf" if np.isinf(r) else r) for r in funnel.rho.tolist()],
        "S": funnel.S.reshape(funnel.n_knots, -1).tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_funnel(path, trajectory=None) -> Funnel:
    """Read a funnel file; pass the generating trajectory to re-attach the
    nominal knot states."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != FUNNEL_FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported funnel format version {doc.get('version')}")
    try:
        ts = np.asarray(doc["knot_times"], dtype=float)
        n = len(ts)
        rho = np.array([np.inf if r == "inf" else float(r) for r in doc["rho"]])
        S = np.asarray(doc["S"], dtype=float)
        nx = int(round(np.sqrt(S.shape[1])))
        S = S.reshape(n, nx, nx)
        tid = str(doc.get("trajectory_id", ""))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed funnel file ({exc})") from None
    xs = None
    if trajectory is not None:
        if len(trajectory.xs) != n or trajectory.state_dim != nx:
            raise ConfigError("trajectory does not match the funnel knots")
        xs = trajectory.xs.copy()
    return Funnel(ts=ts, S=S, rho=rho, trajectory_id=tid, xs=xs)
