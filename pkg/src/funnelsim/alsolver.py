"""Augmented Lagrangian method for equality constraints with box bounds.

Minimizes f(z) subject to c(z) = 0 and lb <= z <= ub by a sequence of
box-constrained inner solves of

    f(z) - lam @ c(z) + (mu/2) |c(z)|^2

with first-order multiplier updates, penalty growth on insufficient
progress, and tightening inner tolerances.  Inner solves use L-BFGS-B.
An iterate whose infeasibility is worse than the best accepted so far is
rejected and retried from the best point with a larger penalty, so the
accepted infeasibility trace is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, minimize


@dataclass
class AlOptions:
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e9
    tol_feas: float = 1e-7
    tol_stat: float = 1e-4
    max_outer: int = 40
    inner_maxiter: int = 2000
    inner_pgtol0: float = 1e-2
    pgtol_shrink: float = 0.2
    pgtol_min: float | None = None  # defaults to 0.3 * tol_stat


@dataclass
class AlResult:
    z: np.ndarray
    multipliers: np.ndarray
    converged: bool
    outer_iters: int
    inner_iters: int
    penalty: float
    feasibility: float
    stationarity: float
    objective: float
    feas_trace: list = field(default_factory=list)


def _projected_grad_norm(z, g, lb, ub):
    at_lb = z <= lb + 1e-12
    at_ub = z >= ub - 1e-12
    pg = g.copy()
    pg[at_lb] = np.minimum(pg[at_lb], 0.0)
    # Apply the upper-bound rule to the already-projected value so that a
    # variable fixed by lb == ub always projects to zero.
    pg[at_ub] = np.maximum(pg[at_ub], 0.0)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def solve_auglag(objective, constraints, jtvp, lb, ub, z0, options=None) -> AlResult:
    """Run the augmented Lagrangian loop.

    objective(z) -> (f, grad); constraints(z) -> c; jtvp(z, y) -> J(z).T @ y.
    """
    opt = options or AlOptions()
    pgtol_min = opt.pgtol_min if opt.pgtol_min is not None else 0.3 * opt.tol_stat
    z = np.clip(np.asarray(z0, dtype=float), lb, ub)
    c = constraints(z)
    lam = np.zeros_like(c)
    mu = opt.mu0
    eta = max(0.1, 10 * opt.tol_feas)
    pgtol = opt.inner_pgtol0
    box = Bounds(lb, ub)

    best_feas = float(np.max(np.abs(c))) if c.size else 0.0
    best_z = z.copy()
    trace = []
    inner_total = 0
    converged = False
    feas = best_feas
    stat = np.inf
    stalled_at_max = False

    for outer in range(1, opt.max_outer + 1):
        lam_k, mu_k = lam.copy(), mu

        def al(zz):
            f, g = objective(zz)
            cc = constraints(zz)
            val = f - lam_k @ cc + 0.5 * mu_k * (cc @ cc)
            grad = g + jtvp(zz, mu_k * cc - lam_k)
            return val, grad

        res = minimize(al, z, jac=True, method="L-BFGS-B", bounds=box,
                       options={"maxiter": opt.inner_maxiter, "gtol": pgtol,
                                "ftol": 1e-16, "maxcor": 30})
        inner_total += int(res.nit)
        z_try = res.x
        c = constraints(z_try)
        feas = float(np.max(np.abs(c))) if c.size else 0.0
        # The AL gradient at the inner solution equals the Lagrangian
        # gradient under the first-order multiplier update, so it doubles
        # as the stationarity measure.
        _, g = objective(z_try)
        stat = _projected_grad_norm(z_try, g + jtvp(z_try, mu * c - lam), lb, ub)

        if feas > max(1.5 * best_feas, opt.tol_feas):
            # Genuine regression: discard the iterate and sharpen the penalty.
            if mu >= opt.mu_max:
                stalled_at_max = True
                trace.append(best_feas)
                break
            mu = min(mu * opt.mu_growth, opt.mu_max)
            z = best_z.copy()
            trace.append(best_feas)
            continue

        z = z_try
        if feas < best_feas:
            best_feas, best_z = feas, z.copy()
        trace.append(best_feas)

        if feas <= max(eta, opt.tol_feas):
            lam = lam - mu * c
            eta = max(min(0.2 * eta, 0.25 * feas), 0.1 * opt.tol_feas)
            pgtol = max(pgtol * opt.pgtol_shrink, pgtol_min)
        else:
            mu = min(mu * opt.mu_growth, opt.mu_max)

        if feas <= opt.tol_feas and stat <= opt.tol_stat:
            converged = True
            break

    if stalled_at_max:
        z = best_z
        c = constraints(z)
        feas = float(np.max(np.abs(c))) if c.size else 0.0
    f, g = objective(z)
    stat = _projected_grad_norm(z, g + jtvp(z, -lam), lb, ub)
    return AlResult(z=z, multipliers=lam, converged=converged, outer_iters=outer,
                    inner_iters=inner_total, penalty=mu, feasibility=feas,
                    stationarity=stat, objective=f, feas_trace=trace)
