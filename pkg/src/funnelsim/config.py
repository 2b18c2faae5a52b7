"""Declarative run configuration (TOML).

A config file either names a built-in scenario and overrides parts of it,
or defines everything from scratch.  All keys are optional when a base
scenario is named; without one, [model], [weights], [bounds], [tracking]
and [estimation] must be complete.

Schema::

    scenario = "freeflyer"      # optional preset: "detumble" | "freeflyer"
    seed = 0                    # master seed; stages derive their own streams
    n_intervals = 100
    dt_init = 0.3               # optional starting interval length
    sim_dt = 0.001              # rollout integrator step

    [model]                     # replaces the preset model entirely
    base_mass = 4.26
    base_inertia = 0.064
    arm_mount = 0.0
    [[model.links]]             # zero or more, in order from the base
    mass = 10.0
    inertia = 0.675
    length = 0.9
    com = 0.45
    [model.payload]             # optional, requires at least one link
    mass = 50.0
    inertia = 3.0
    offset = 0.0

    [weights]                   # trajectory objective
    w_time = 0.01
    W_effort = [1.0, 1.0, 1.0]  # flat list = diagonal; nested lists = full
    W_terminal = [...]          # optional terminal quadratic

    [bounds]
    u_max = [0.5, 0.5, 0.1]
    u_min = [-0.5, -0.5, -0.1]  # defaults to -u_max
    x0 = [2.0, 2.0, 0.0, 0.0, 0.0, 0.0]
    xf = [2.0, 2.0, 6.2832, 0.0, 0.0, 0.0]   # nan leaves a component free
    dt_bounds = [0.05, 0.4]
    q_min = [...]               # optional per-coordinate boxes
    q_max = [...]
    qd_min = [...]
    qd_max = [...]
    [bounds.waypoints]          # knot index -> pinned values (nan = free)
    "50" = [4.0, 2.0, 3.14159, nan, nan, nan]

    [tracking]
    Q = [50.0, 50.0, 0.01, 50.0, 50.0, 0.001]
    R = [1.0, 1.0, 10.0]

    [estimation]
    n_sims = 1000
    x_bar_max = [0.05, 0.05, 0.1, 0.01, 0.01, 0.02]
    alpha = inf
    beta = 1000.0

    deadband = [0.05, 0.05, 0.01]   # actuator thresholds (top level, optional)

    [run]                       # orchestration defaults, overridable by flags
    n_check = 200
    deadband = false            # apply the thresholds during rollouts
    parallel = false
    batch_size = 64

TOML parse errors surface with the parser's line/column diagnostics;
semantic errors name the offending key.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .dynamics import Link, MultibodyModel, Payload
from .errors import ConfigError
from .roa import EstimationConfig
from .scenarios import Scenario, load_scenario
from .trajopt import CostWeights, TrajBounds


def _matrix(value, n, key):
    """Flat list -> diagonal matrix; nested lists -> full matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (n,):
            raise ConfigError(f"{key}: expected {n} diagonal entries, got {arr.shape}")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ConfigError(f"{key}: expected a {n}x{n} matrix, got {arr.shape}")
    return arr


def _vector(value, n, key):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"{key}: expected {n} entries, got {arr.shape}")
    return arr


def _model_from(tbl) -> MultibodyModel:
    try:
        links = tuple(
            Link(mass=float(lk["mass"]), inertia=float(lk["inertia"]),
                 length=float(lk["length"]), com=float(lk["com"]))
            for lk in tbl.get("links", []))
        payload = None
        if "payload" in tbl:
            p = tbl["payload"]
            payload = Payload(mass=float(p["mass"]), inertia=float(p["inertia"]),
                              offset=float(p.get("offset", 0.0)))
        return MultibodyModel(base_mass=float(tbl["base_mass"]),
                              base_inertia=float(tbl["base_inertia"]),
                              links=links, payload=payload,
                              arm_mount=float(tbl.get("arm_mount", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"model: missing key {exc}") from None


def _require(doc, key, base_value, context):
    if key in doc:
        return doc[key]
    if base_value is _MISSING:
        raise ConfigError(f"{context}: '{key}' is required without a scenario preset")
    return base_value


_MISSING = object()


def build_scenario(doc: dict) -> Scenario:
    base = load_scenario(doc["scenario"]) if "scenario" in doc else None

    if "model" in doc:
        model = _model_from(doc["model"])
    elif base is not None:
        model = base.model
    else:
        raise ConfigError("[model] is required without a scenario preset")
    nx, nu = model.state_dim, model.control_dim

    wt = doc.get("weights", {})
    bw = base.weights if base else None
    w_time = float(_require(wt, "w_time", bw.w_time if bw else _MISSING, "weights"))
    W_effort = (_matrix(wt["W_effort"], nu, "weights.W_effort") if "W_effort" in wt
                else (bw.W_effort if bw else None))
    if W_effort is None:
        raise ConfigError("weights: 'W_effort' is required without a scenario preset")
    if "W_terminal" in wt:
        W_terminal = _matrix(wt["W_terminal"], nx, "weights.W_terminal")
    else:
        W_terminal = bw.W_terminal if bw else None
    weights = CostWeights(w_time=w_time, W_effort=W_effort, W_terminal=W_terminal)

    bt = doc.get("bounds", {})
    bb = base.bounds if base else None
    if "u_max" in bt:
        u_max = _vector(bt["u_max"], nu, "bounds.u_max")
    elif bb is not None:
        u_max = bb.u_max
    else:
        raise ConfigError("bounds: 'u_max' is required without a scenario preset")
    u_min = (_vector(bt["u_min"], nu, "bounds.u_min") if "u_min" in bt
             else (bb.u_min if bb is not None and "u_max" not in bt else -u_max))

    def opt_vec(key, size):
        if key in bt:
            return _vector(bt[key], size, f"bounds.{key}")
        return getattr(bb, key) if bb is not None else None

    nq = nx // 2
    waypoints = {}
    if "waypoints" in bt:
        for k, v in bt["waypoints"].items():
            try:
                knot = int(k)
            except ValueError:
                raise ConfigError(f"bounds.waypoints: knot '{k}' is not an integer") from None
            waypoints[knot] = _vector(v, nx, f"bounds.waypoints.{k}")
    elif bb is not None:
        waypoints = bb.waypoints

    if "dt_bounds" in bt:
        dtb = bt["dt_bounds"]
        if len(dtb) != 2:
            raise ConfigError("bounds.dt_bounds: expected [lower, upper]")
        dt_bounds = (float(dtb[0]), float(dtb[1]))
    elif bb is not None:
        dt_bounds = bb.dt_bounds
    else:
        dt_bounds = (0.01, 0.2)

    bounds = TrajBounds(u_min=u_min, u_max=u_max,
                        q_min=opt_vec("q_min", nq), q_max=opt_vec("q_max", nq),
                        qd_min=opt_vec("qd_min", nq), qd_max=opt_vec("qd_max", nq),
                        x0=opt_vec("x0", nx), xf=opt_vec("xf", nx),
                        waypoints=waypoints, dt_bounds=dt_bounds)

    tr = doc.get("tracking", {})
    Q = (_matrix(tr["Q"], nx, "tracking.Q") if "Q" in tr
         else (base.Q if base else None))
    R = (_matrix(tr["R"], nu, "tracking.R") if "R" in tr
         else (base.R if base else None))
    if Q is None or R is None:
        raise ConfigError("tracking: 'Q' and 'R' are required without a scenario preset")

    n_intervals = int(_require(doc, "n_intervals",
                               base.n_intervals if base else _MISSING, "config"))

    et = doc.get("estimation", {})
    be = base.estimation if base else None
    if "x_bar_max" in et:
        x_bar_max = _vector(et["x_bar_max"], nx, "estimation.x_bar_max")
    elif be is not None:
        x_bar_max = be.x_bar_max
    else:
        raise ConfigError("estimation: 'x_bar_max' is required without a scenario preset")
    est = EstimationConfig(
        n_sims=int(_require(et, "n_sims", be.n_sims if be else _MISSING, "estimation")),
        m_knots=n_intervals,
        x_bar_max=x_bar_max,
        alpha=float(et.get("alpha", be.alpha if be else np.inf)),
        seed=int(et.get("seed", be.seed if be else 0)),
        beta=float(et.get("beta", be.beta if be else 1000.0)))

    deadband = None
    if "deadband" in doc:
        deadband = _vector(doc["deadband"], nu, "deadband")
    elif base is not None:
        deadband = base.deadband

    sc = Scenario(
        name=doc.get("name", base.name if base else "custom"),
        model=model, weights=weights, bounds=bounds, n_intervals=n_intervals,
        Q=Q, R=R, estimation=est, deadband=deadband,
        sim_dt=float(doc.get("sim_dt", base.sim_dt if base else 1e-3)),
        dt_init=(float(doc["dt_init"]) if "dt_init" in doc
                 else (base.dt_init if base else None)),
        grasp_q=base.grasp_q if base else None,
        grid_side=float(doc.get("grid_side", base.grid_side if base else 1.0)),
        grid_n=int(doc.get("grid_n", base.grid_n if base else 5)))
    return sc


def run_options(doc: dict) -> dict:
    rt = doc.get("run", {})
    opts = {
        "seed": int(doc.get("seed", 0)),
        "n_check": int(rt.get("n_check", 200)),
        "deadband": bool(rt.get("deadband", False)),
        "parallel": bool(rt.get("parallel", False)),
        "batch_size": int(rt.get("batch_size", 64)),
    }
    if opts["n_check"] < 0 or opts["batch_size"] < 1:
        raise ConfigError("run: n_check must be >= 0 and batch_size >= 1")
    return opts


def load_config(path) -> tuple[Scenario, dict]:
    """Parse a TOML run configuration into a scenario plus run options."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return build_scenario(doc), run_options(doc)
