"""Probabilistic region-of-attraction (funnel) estimation.

The estimator samples initial states from the funnel inlet, rolls each out
under the tracking policy, and shrinks every knot threshold upstream of a
breach down to the cost-to-go values that trial recorded.  Thresholds only
ever shrink; the outlet threshold rho_f is fixed by the tolerated terminal
deviation and never moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EstimationError
from .funnel import Funnel
from .sim import REASONS, FuelBudget, RolloutConfig, rollout_batch
from .trajopt import trajectory_fingerprint


def sample_unit_sphere(dim: int, rng) -> np.ndarray:
    """One draw, uniform over the closed unit ball in R^dim.

    Gaussian direction with radius U^(1/dim), so ||y|| <= 1 always.
    """
    y = _ball(dim, rng, None)
    return y


def _ball(dim, rng, n):
    """Uniform ball samples; n=None gives a single vector."""
    if dim < 1:
        raise ConfigError("dimension must be at least 1")
    shape = (dim,) if n is None else (n, dim)
    y = rng.standard_normal(shape)
    nrm = np.linalg.norm(y, axis=-1, keepdims=True)
    nrm[nrm == 0.0] = 1.0
    r = rng.uniform(size=nrm.shape) ** (1.0 / dim)
    return y * (r / nrm)


def _sphere(dim, rng, n):
    """Uniform samples on the unit sphere surface."""
    y = rng.standard_normal((n, dim))
    nrm = np.linalg.norm(y, axis=-1, keepdims=True)
    nrm[nrm == 0.0] = 1.0
    return y / nrm


@dataclass(frozen=True)
class EllipsoidSampler:
    """Uniform sampling of {x | (x - center)' S (x - center) <= rho}.

    Samples map the unit ball through the inverse square root of S/rho,
    cached as an eigendecomposition.  Pass an explicit rng to sample();
    the stored seed only feeds the sampler's own lazily-created stream.
    """

    center: np.ndarray
    S: np.ndarray
    rho: float
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        S = np.asarray(self.S, dtype=float)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "S", S)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or c.shape != (S.shape[0],):
            raise ConfigError("center and shape matrix dimensions disagree")
        if np.max(np.abs(S - S.T)) > 1e-9 * max(1.0, np.max(np.abs(S))):
            raise ConfigError("shape matrix must be symmetric")
        if not 0.0 < self.rho < np.inf:
            raise ConfigError("sampling threshold must be positive and finite")
        w, V = np.linalg.eigh(S)
        if w[0] <= 0.0:
            raise ConfigError("shape matrix must be positive definite")
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_V", V)
        object.__setattr__(self, "_rng", None)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def W(self) -> np.ndarray:
        """Rows are the eigenvectors of S/rho."""
        return self._V.T

    @property
    def lam(self) -> np.ndarray:
        """Eigenvalues of S/rho, ascending, strictly positive."""
        return self._w / self.rho

    def _stream(self):
        if self._rng is None:
            object.__setattr__(self, "_rng", np.random.default_rng(self.seed))
        return self._rng

    def sample(self, rng=None, n: int | None = None, rho: float | None = None):
        """Uniform over the ellipsoid; rho overrides the built threshold
        (used while the inlet shrinks, the factorization is shared)."""
        rng = self._stream() if rng is None else rng
        rho = self.rho if rho is None else float(rho)
        if not 0.0 < rho < np.inf:
            raise ConfigError("sampling threshold must be positive and finite")
        y = _ball(self.dim, rng, n)
        return self.center + np.sqrt(rho) * ((y / np.sqrt(self._w)) @ self._V.T)

    def boundary(self, rng, n: int, rho: float | None = None):
        """n points with quadratic form exactly rho (boundary samples)."""
        rho = self.rho if rho is None else float(rho)
        y = _sphere(self.dim, rng, n)
        return self.center + np.sqrt(rho) * ((y / np.sqrt(self._w)) @ self._V.T)


def sample_ellipsoid(sampler: EllipsoidSampler, rng=None) -> np.ndarray:
    """One state drawn uniformly from the sampler's ellipsoid."""
    return sampler.sample(rng)


def rho_final(policy, x_bar_max) -> float:
    """Outlet threshold from the tolerated terminal deviation."""
    xb = np.asarray(x_bar_max, dtype=float)
    if xb.shape != (policy.state_dim,):
        raise ConfigError("x_bar_max dimension must match the state")
    return float(xb @ policy.S[-1] @ xb)


@dataclass(frozen=True)
class EstimationConfig:
    """Estimation run settings.

    alpha is the fuel margin (budget = (1 + alpha) * nominal fuel, inf to
    disable).  beta sizes the bootstrap ellipsoid the first samples are
    drawn from while the inlet threshold is still infinite:
    {x_bar' S_0 x_bar <= beta * rho_f}.
    """

    n_sims: int
    m_knots: int
    x_bar_max: np.ndarray
    alpha: float = np.inf
    seed: int = 0
    beta: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "x_bar_max", np.asarray(self.x_bar_max, dtype=float))
        if self.n_sims < 0:
            raise ConfigError("n_sims must be non-negative")
        if self.m_knots < 1:
            raise ConfigError("m_knots must be at least 1")
        if not np.all(np.isfinite(self.x_bar_max)):
            raise ConfigError("x_bar_max must be finite")
        if self.alpha < 0:
            raise ConfigError("fuel margin alpha must be non-negative")
        if not 0.0 < self.beta < np.inf:
            raise ConfigError("bootstrap multiplier beta must be positive and finite")


def check_terminal_handoff(model, policy, rho_f, rng, n=100, duration=10.0, dt=0.01):
    """Outlet states must contract under the held terminal gain.

    Samples the outlet boundary and integrates the pure terminal regulator
    u = -K_f (x - x_f) for `duration`; the terminal quadratic value must
    decrease for every sample, otherwise estimation would certify hand-off
    states the infinite-horizon controller cannot keep.
    """
    Sf = policy.S[-1]
    xf = policy.xs[-1]
    Kf = policy.K[-1]
    sampler = EllipsoidSampler(center=xf, S=Sf, rho=float(rho_f))
    X = sampler.boundary(rng, n)
    x = X.copy()
    steps = int(round(duration / dt))

    def cl(y):
        return model.derivative(y, -(y - xf) @ Kf.T)

    for _ in range(steps):
        k1 = cl(x)
        k2 = cl(x + 0.5 * dt * k1)
        k3 = cl(x + 0.5 * dt * k2)
        k4 = cl(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    d0 = X - xf
    d1 = x - xf
    v0 = np.einsum("ni,ij,nj->n", d0, Sf, d0)
    v1 = np.einsum("ni,ij,nj->n", d1, Sf, d1)
    ok = np.isfinite(v1) & (v1 < v0)
    if not np.all(ok):
        raise EstimationError(
            f"{int(np.sum(~ok))}/{n} outlet boundary states do not contract under "
            "the terminal controller; reduce x_bar_max so the outlet fits the "
            "terminal region of attraction")


def estimate_funnel(model, policy, config: EstimationConfig, rollout_config=None, *,
                    parallel=False, batch_size=64, candidates=None,
                    check_outlet=True) -> Funnel:
    """Shrink per-knot thresholds until sampled rollouts respect them.

    Thresholds start infinite everywhere except the outlet.  Each trial
    samples the current inlet (the bootstrap ellipsoid while it is still
    unbounded), rolls out under the policy with the current thresholds as
    cost monitors plus the fuel budget, and on a breach at knot k assigns
    rho_kappa = min(rho_kappa, J*_kappa) for every kappa < k.

    Sequential mode reproduces the per-trial update exactly and is
    deterministic for a fixed seed.  Parallel mode rolls out batches
    against a frozen threshold snapshot and min-merges the shrinks; with a
    single batch this provably shrinks at least as much as a sequential
    pass over the same candidates (each trial then contributes its widest
    possible shrink range).  Across multiple batches the comparison is
    heuristic, not guaranteed.

    ``candidates`` replaces sampling with a fixed list of initial states;
    entries outside the current inlet are skipped, mirroring what the
    sampler could never have produced.
    """
    m = config.m_knots
    if m != policy.n_intervals:
        raise ConfigError("m_knots must match the policy's interval count")
    rho_f = rho_final(policy, config.x_bar_max)
    if not rho_f > 0.0:
        raise ConfigError("x_bar_max gives an empty outlet (rho_f = 0)")
    rho_boot = config.beta * rho_f

    cfg = (rollout_config or RolloutConfig()).replace(
        fuel=FuelBudget.from_trajectory(policy.trajectory(), config.alpha),
        record_fine=False)

    ss = np.random.SeedSequence(config.seed)
    seed_handoff, seed_samples = ss.spawn(2)
    if check_outlet:
        check_terminal_handoff(model, policy, rho_f,
                               np.random.default_rng(seed_handoff))
    rng = np.random.default_rng(seed_samples)

    sampler = EllipsoidSampler(center=policy.xs[0], S=policy.S[0], rho=rho_boot)
    rho = np.full(m + 1, np.inf)
    rho[m] = rho_f

    if candidates is not None:
        cand = np.atleast_2d(np.asarray(candidates, dtype=float))
        total = len(cand)
    else:
        cand = None
        total = config.n_sims

    history = []

    def merge(j, x0, reason, knot, cost_row):
        updates = []
        if knot is not None and knot >= 0:
            vals = cost_row[:knot]
            hit = np.flatnonzero(vals < rho[:knot])
            rho[:knot] = np.minimum(rho[:knot], vals)
            updates = [[int(k), float(vals[k])] for k in hit]
        history.append({"j": j, "x0": np.asarray(x0).tolist(),
                        "termination": reason,
                        "knot": None if knot is None or knot < 0 else int(knot),
                        "updates": updates})

    pos = 0
    while pos < total:
        nb = min(batch_size, total - pos) if parallel else 1
        rho0 = rho[0] if np.isfinite(rho[0]) else rho_boot
        snapshot = rho.copy()
        if cand is not None:
            batch_x0 = cand[pos:pos + nb]
            keep = policy.knot_cost(0, batch_x0) <= rho0
        else:
            batch_x0 = sampler.sample(rng, n=nb, rho=rho0)
            keep = np.ones(nb, dtype=bool)
        live = batch_x0[keep]
        if len(live):
            res = rollout_batch(model, policy, live,
                                cfg.replace(cost_thresholds=snapshot))
        bi = 0
        for r in range(nb):
            j = pos + r + 1
            if not keep[r]:
                merge(j, batch_x0[r], "skipped", None, None)
                continue
            merge(j, live[bi], REASONS[res.reasons[bi]], int(res.knots[bi]),
                  res.cost[bi])
            bi += 1
        pos += nb

    if total >= 1 and not np.isfinite(rho[0]):
        raise EstimationError(
            "no trial breached, so the inlet threshold never became finite; "
            "every sample inside the bootstrap region tracked successfully — "
            "increase the bootstrap multiplier beta to probe a larger region")
    if np.any(rho <= 0.0):
        raise EstimationError("funnel collapsed to a point at some knot")

    return Funnel(ts=policy.ts.copy(), S=policy.S.copy(), rho=rho,
                  trajectory_id=trajectory_fingerprint(policy.trajectory()),
                  xs=policy.xs.copy(), history=tuple(history))


@dataclass(frozen=True)
class VerificationReport:
    """Fresh-sample success statistics for an estimated funnel."""

    n_check: int
    successes: int
    fraction: float
    wilson_low: float
    wilson_high: float
    records: tuple

    def __str__(self):
        return (f"{self.successes}/{self.n_check} succeeded "
                f"(fraction {self.fraction:.3f}, "
                f"95% Wilson [{self.wilson_low:.3f}, {self.wilson_high:.3f}])")


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054):
    """95% score interval for a binomial fraction."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    den = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, center - half), min(1.0, center + half)


def verify_funnel(model, policy, funnel: Funnel, n_check: int, rng,
                  rollout_config=None) -> VerificationReport:
    """Sample the inlet fresh and report the tracking success fraction.

    Success means the rollout ran the whole horizon without breaching its
    monitors and ended with terminal cost-to-go below the outlet
    threshold.  No mid-horizon funnel-membership abort is applied; the
    estimate is statistical, not a certificate.
    """
    if not np.isfinite(funnel.rho[0]):
        raise ConfigError("funnel inlet is unbounded; estimate it first")
    rho_f = float(funnel.rho[-1])
    if n_check < 0:
        raise ConfigError("n_check must be non-negative")
    if n_check == 0:
        return VerificationReport(0, 0, float("nan"), 0.0, 1.0, ())

    cfg = (rollout_config or RolloutConfig()).replace(cost_thresholds=None,
                                                      record_fine=False)
    sampler = EllipsoidSampler(center=funnel.center(0), S=funnel.S[0],
                               rho=float(funnel.rho[0]))
    X0 = sampler.sample(rng, n=n_check)
    res = rollout_batch(model, policy, X0, cfg)

    terminal = res.cost[:, -1]
    ok = res.completed & np.isfinite(terminal) & (terminal < rho_f)
    last = np.where(res.knots < 0, res.xs.shape[1] - 1, res.knots)
    records = tuple(
        {"x0": X0[i].tolist(), "termination": REASONS[res.reasons[i]],
         "knot": None if res.knots[i] < 0 else int(res.knots[i]),
         "terminal_cost": None if not np.isfinite(terminal[i]) else float(terminal[i]),
         "x_final": res.xs[i, last[i]].tolist(),
         "success": bool(ok[i])}
        for i in range(n_check))
    successes = int(np.sum(ok))
    lo, hi = wilson_interval(successes, n_check)
    return VerificationReport(n_check, successes, successes / n_check, lo, hi,
                              records)
