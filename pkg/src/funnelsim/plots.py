"""SVG plot emitters for funnels and trajectories.

All functions render headlessly and return ``(path, notices)`` where
``path`` is the written file (or None when there was nothing to draw)
and ``notices`` collects human-readable warnings such as skipped
unshrunk knots.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError, IndeterminateError
from .funnel import Funnel, project


def read_state_columns(path):
    """Extract the state trace (columns named x0, x1, ...) from a rollout or
    trajectory CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    header = rows[0]
    cols = [i for i, name in enumerate(header)
            if name.startswith("x") and name[1:].isdigit()]
    if not cols:
        raise ConfigError(f"{path}: no state columns (x0, x1, ...) found")
    try:
        data = np.array([[float(r[i]) for i in cols] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed CSV row: {exc}") from None
    return data


def plot_rho_curves(funnels, labels, path):
    """Threshold-versus-time curves for one or more funnels (log scale).

    Knots that were never shrunk (infinite threshold) are left out of the
    curve and reported in the notices.  If no funnel has a finite knot the
    file is not written.
    """
    notices = []
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    drew = False
    for funnel, label in zip(funnels, labels):
        rho = funnel.rho
        finite = np.isfinite(rho)
        n_inf = int((~finite).sum())
        if n_inf:
            notices.append(
                f"{label}: {n_inf} of {len(rho)} knots unshrunk (no finite "
                "threshold); omitted from the curve")
        if not finite.any():
            continue
        ax.semilogy(funnel.ts[finite], rho[finite], marker=".", label=label)
        drew = True
    if not drew:
        plt.close(fig)
        notices.append("no finite thresholds in any funnel; plot not written")
        return None, notices
    ax.set_xlabel("time [s]")
    ax.set_ylabel("level-set threshold")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return str(path), notices


def plot_slice(funnel: Funnel, axes_pair, path, trajectories=(),
               traj_labels=None, knots=None):
    """Two-dimensional section of a funnel with optional trajectory overlays.

    Draws the inlet boundary solid, the outlet dashed, and any interior
    knots dotted.  Trajectories are arrays of states; only the selected
    coordinate pair is plotted.
    """
    notices = []
    i, j = axes_pair
    if knots is None:
        knots = [0, funnel.n_knots - 1]
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    drew = False
    styles = {0: ("-", 1.8), funnel.n_knots - 1: ("--", 1.8)}
    for k in knots:
        try:
            ell = project(funnel, k, (i, j))
        except IndeterminateError:
            notices.append(f"knot {k}: threshold is unbounded; section skipped")
            continue
        ls, lw = styles.get(k, (":", 1.0))
        pts = ell.boundary(256)
        name = "inlet" if k == 0 else ("outlet" if k == funnel.n_knots - 1
                                       else f"knot {k}")
        ax.plot(pts[:, 0], pts[:, 1], ls, linewidth=lw, label=name)
        ax.plot(*ell.center, "+", markersize=6, color=ax.lines[-1].get_color())
        drew = True
    if traj_labels is None:
        traj_labels = [f"trace {n}" for n in range(len(trajectories))]
    for xs, label in zip(trajectories, traj_labels):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] <= max(i, j):
            raise ConfigError(
                f"trajectory overlay needs at least {max(i, j) + 1} state "
                f"columns, got shape {xs.shape}")
        ax.plot(xs[:, i], xs[:, j], linewidth=0.8, alpha=0.8, label=label)
        drew = True
    if not drew:
        plt.close(fig)
        notices.append("nothing to draw in the section; plot not written")
        return None, notices
    ax.set_xlabel(f"state[{i}]")
    ax.set_ylabel(f"state[{j}]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return str(path), notices
