"""Command line pipeline: optimize -> synthesize -> estimate -> verify -> plot.

Each stage reads the products of the previous one from disk, so runs can be
resumed, inspected, and reproduced piecemeal.  A manifest JSON is written
next to every primary output recording the tool version, the configuration
(by content hash), the seed, input/output hashes, and wall-clock timings.

Randomness: one master seed (``--seed`` or the config's ``seed`` key) is
split per stage through ``SeedSequence([master, stage_id])``, so stages
draw from independent streams and rerunning a single stage reproduces its
output byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .dynamics import linearize
from .errors import (
    ConfigError,
    EstimationError,
    IndeterminateError,
    NumericalError,
    SolverError,
)
from .funnel import load_funnel, save_funnel
from .plots import plot_rho_curves, plot_slice, read_state_columns
from .roa import EstimationConfig, estimate_funnel, verify_funnel
from .scenarios import SCENARIOS, load_scenario
from .trajopt import Trajectory, load_trajectory, save_trajectory, solve
from .tvlqr import _riccati_rate, load_policy, save_policy, solve_tvlqr

_STAGE_IDS = {"optimize": 0, "synthesize": 1, "estimate": 2, "verify": 3, "plot": 4}


class _CliParser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as ConfigError.

    argparse exits with status 2 on bad usage, which this tool reserves
    for numerical failures; remapping happens by raising instead.
    """

    def error(self, message):
        raise ConfigError(message)


def _stage_seed(master: int, command: str) -> int:
    ss = np.random.SeedSequence([int(master), _STAGE_IDS[command]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _hash_file(path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return "sha256:" + digest


def _write_manifest(primary_out, command, seed, config_desc, inputs, outputs,
                    timings) -> str:
    manifest = {
        "tool": "funnelsim",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config_desc,
        "inputs": {name: {"path": str(p), "sha256": _hash_file(p)}
                   for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": _hash_file(p)}
                    for name, p in outputs.items()},
        "timings_s": {name: round(float(v), 6) for name, v in timings.items()},
    }
    path = str(primary_out) + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _load_setup(args):
    """Resolve the scenario plus run options from --scenario or --config."""
    if getattr(args, "config", None):
        scenario, opts = load_config(args.config)
        desc = {"path": str(args.config), "sha256": _hash_file(args.config)}
    else:
        scenario = load_scenario(args.scenario)
        opts = {"seed": 0, "n_check": 200, "deadband": False,
                "parallel": False, "batch_size": 64}
        desc = {"scenario": args.scenario}
    if getattr(args, "seed", None) is not None:
        opts["seed"] = args.seed
    return scenario, opts, desc


def _tracking_config(scenario, args, opts):
    use_deadband = bool(getattr(args, "deadband", False) or opts["deadband"])
    if use_deadband and scenario.deadband is None:
        raise ConfigError(
            f"scenario '{scenario.name}' defines no actuator deadband; "
            "drop --deadband or add thresholds to the config")
    return scenario.rollout_config(deadband=use_deadband)


def _require_state_dim(scenario, policy):
    if policy.state_dim != scenario.model.state_dim:
        raise ConfigError(
            f"policy has {policy.state_dim} states but the scenario model "
            f"has {scenario.model.state_dim}; check that the policy was "
            "synthesized for this configuration")


def cmd_optimize(args) -> int:
    scenario, opts, desc = _load_setup(args)
    problem = scenario.problem()
    print(f"optimizing '{scenario.name}': {problem.K} intervals, "
          f"{problem.nx} states, {problem.nu} controls")
    t0 = time.perf_counter()
    result = solve(problem)
    t_solve = time.perf_counter() - t0
    traj = result.trajectory
    rep = result.report
    save_trajectory(traj, args.out)
    print(f"solved in {rep.outer_iters} outer / {rep.inner_iters} inner "
          f"iterations: objective {rep.objective:.6g}, "
          f"max constraint violation {rep.feasibility:.3e}")
    print(f"trajectory: {traj.n_intervals} intervals of {traj.dt:.4f} s "
          f"({traj.duration:.2f} s total) -> {args.out}")
    mpath = _write_manifest(args.out, "optimize", opts["seed"], desc,
                            inputs={}, outputs={"trajectory": args.out},
                            timings={"solve": t_solve})
    print(f"manifest -> {mpath}")
    return 0


def _riccati_residual(policy, lin, Q) -> float:
    """Worst midpoint-rule defect of the cost-to-go sweep, scale-normalized.

    Checks that consecutive knot matrices are consistent with the
    continuous-time backward recurrence; a large value flags an
    integration step too coarse for the closed-loop stiffness.
    """
    Rinv = np.linalg.inv(policy.R)
    Bq = np.einsum("kij,jl,kml->kim", lin.B, Rinv, lin.B)
    Bq = 0.5 * (Bq + np.swapaxes(Bq, -1, -2))
    S, A = policy.S, lin.A
    dts = np.diff(policy.ts)
    worst = 0.0
    for k in range(len(dts)):
        Sm = 0.5 * (S[k] + S[k + 1])
        rate = _riccati_rate(Sm, 0.5 * (A[k] + A[k + 1]),
                             0.5 * (Bq[k] + Bq[k + 1])) - Q
        defect = (S[k + 1] - S[k]) / dts[k] - rate
        worst = max(worst, float(np.max(np.abs(defect))
                                 / max(1.0, np.max(np.abs(Sm)))))
    return worst


def cmd_synthesize(args) -> int:
    scenario, opts, desc = _load_setup(args)
    traj = load_trajectory(args.trajectory)
    if traj.state_dim != scenario.model.state_dim:
        raise ConfigError(
            f"trajectory has {traj.state_dim} states but the scenario model "
            f"has {scenario.model.state_dim}")
    t0 = time.perf_counter()
    lin = linearize(scenario.model, traj)
    t_lin = time.perf_counter() - t0
    Qf = None if args.qf == "care" else scenario.Q
    t0 = time.perf_counter()
    policy = solve_tvlqr(traj, lin, scenario.Q, scenario.R, Qf=Qf)
    t_sweep = time.perf_counter() - t0
    residual = _riccati_residual(policy, lin, scenario.Q)
    save_policy(policy, args.out)
    print(f"synthesized gains over {policy.n_intervals} intervals "
          f"(terminal cost: {args.qf})")
    print(f"cost-to-go consistency residual (midpoint rule): {residual:.3e}")
    print(f"policy -> {args.out}")
    mpath = _write_manifest(args.out, "synthesize", opts["seed"], desc,
                            inputs={"trajectory": args.trajectory},
                            outputs={"policy": args.out},
                            timings={"linearize": t_lin, "sweep": t_sweep})
    print(f"manifest -> {mpath}")
    return 0


def cmd_estimate(args) -> int:
    scenario, opts, desc = _load_setup(args)
    policy = load_policy(args.policy)
    _require_state_dim(scenario, policy)
    base = scenario.estimation
    cfg = EstimationConfig(
        n_sims=args.sims if args.sims is not None else base.n_sims,
        m_knots=base.m_knots,
        x_bar_max=base.x_bar_max,
        alpha=args.alpha if args.alpha is not None else base.alpha,
        seed=_stage_seed(opts["seed"], "estimate"),
        beta=args.beta if args.beta is not None else base.beta)
    rc = _tracking_config(scenario, args, opts)
    if args.parallel and args.sequential:
        raise ConfigError("--parallel and --sequential are mutually exclusive")
    parallel = (False if args.sequential
                else bool(args.parallel or opts["parallel"]))
    batch = args.batch if args.batch is not None else opts["batch_size"]
    mode = f"parallel (batches of {batch})" if parallel else "sequential"
    print(f"estimating funnel: {cfg.n_sims} rollouts, alpha={cfg.alpha}, "
          f"{mode}, master seed {opts['seed']}")
    t0 = time.perf_counter()
    funnel = estimate_funnel(scenario.model, policy, cfg, rollout_config=rc,
                             parallel=parallel, batch_size=batch)
    t_est = time.perf_counter() - t0
    save_funnel(funnel, args.out)

    log_path = Path(str(args.out) + ".log.jsonl")
    with open(log_path, "w") as fh:
        for rec in funnel.history:
            row = dict(rec)
            row["x0"] = [float(v) for v in np.asarray(rec["x0"])]
            row["updates"] = [[int(k), float(v)] for k, v in rec["updates"]]
            fh.write(json.dumps(row) + "\n")
    csv_path = Path(args.out).with_suffix(".rho.csv")
    with open(csv_path, "w") as fh:
        fh.write("knot,t,rho\n")
        for k in range(funnel.n_knots):
            fh.write(f"{k},{float(funnel.ts[k])!r},{float(funnel.rho[k])!r}\n")

    finite = np.isfinite(funnel.rho)
    print(f"shrunk {int(finite.sum())} of {funnel.n_knots} knots; "
          f"inlet threshold {float(funnel.rho[0]):.6g}, "
          f"outlet threshold {float(funnel.rho[-1]):.6g}")
    print(f"inlet volume index sqrt(det(rho0 * inv(S0))): "
          f"{funnel.volume_proxy(0):.6e}")
    print(f"funnel -> {args.out}")
    mpath = _write_manifest(args.out, "estimate", opts["seed"], desc,
                            inputs={"policy": args.policy},
                            outputs={"funnel": args.out,
                                     "log": log_path,
                                     "rho_csv": csv_path},
                            timings={"estimate": t_est})
    print(f"manifest -> {mpath}")
    return 0


def cmd_verify(args) -> int:
    scenario, opts, desc = _load_setup(args)
    policy = load_policy(args.policy)
    _require_state_dim(scenario, policy)
    nominal = Trajectory(dt=policy.dt, xs=policy.xs, us=policy.us)
    funnel = load_funnel(args.funnel, trajectory=nominal)
    rc = _tracking_config(scenario, args, opts)
    n_check = args.n_check if args.n_check is not None else opts["n_check"]
    rng = np.random.default_rng(
        np.random.SeedSequence([int(opts["seed"]), _STAGE_IDS["verify"]]))
    t0 = time.perf_counter()
    report = verify_funnel(scenario.model, policy, funnel, n_check, rng,
                           rollout_config=rc)
    t_ver = time.perf_counter() - t0
    print(str(report))
    with open(args.out, "w") as fh:
        nx = policy.state_dim
        cols = ",".join(f"x0_{i}" for i in range(nx))
        fh.write(f"trial,status,termination,knot,terminal_cost,{cols}\n")
        for n, rec in enumerate(report.records):
            status = "green" if rec["success"] else "red"
            x0 = ",".join(repr(float(v)) for v in rec["x0"])
            knot = "" if rec["knot"] is None else rec["knot"]
            cost = ("nan" if rec["terminal_cost"] is None
                    else repr(rec["terminal_cost"]))
            fh.write(f"{n},{status},{rec['termination']},{knot},"
                     f"{cost},{x0}\n")
    print(f"per-trial report -> {args.out}")
    mpath = _write_manifest(args.out, "verify", opts["seed"], desc,
                            inputs={"policy": args.policy,
                                    "funnel": args.funnel},
                            outputs={"report": args.out},
                            timings={"verify": t_ver})
    print(f"manifest -> {mpath}")
    return 0


def _parse_axes(text) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--axes expects two comma-separated indices, got '{text}'")
    try:
        i, j = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"--axes expects integers, got '{text}'") from None
    return i, j


def cmd_plot(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nominal = load_trajectory(args.trajectory) if args.trajectory else None
    funnels, labels = [], []
    for path in args.funnels:
        funnels.append(load_funnel(path, trajectory=nominal))
        labels.append(Path(path).stem)
    axes_pair = _parse_axes(args.axes)

    overlays, overlay_labels = [], []
    if nominal is not None:
        overlays.append(nominal.xs)
        overlay_labels.append("nominal")
    for path in args.overlay or []:
        overlays.append(read_state_columns(path))
        overlay_labels.append(Path(path).stem)

    written = []
    notices = []
    path, notes = plot_rho_curves(funnels, labels, out_dir / "rho.svg")
    notices.extend(notes)
    if path:
        written.append(path)
    for funnel, label in zip(funnels, labels):
        path, notes = plot_slice(funnel, axes_pair,
                                 out_dir / f"slice_{label}.svg",
                                 trajectories=overlays,
                                 traj_labels=overlay_labels)
        notices.extend(f"{label}: {n}" for n in notes)
        if path:
            written.append(path)
    for note in notices:
        print(f"notice: {note}")
    for path in written:
        print(f"plot -> {path}")
    if not written:
        print("no plots written")
    return 0


def _add_setup_args(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", choices=sorted(SCENARIOS),
                       help="built-in scenario preset")
    group.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="funnelsim", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version",
                        version=f"funnelsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="solve the nominal trajectory")
    _add_setup_args(p)
    p.add_argument("--out", required=True, help="output trajectory CSV")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("synthesize", help="time-varying tracking gains")
    _add_setup_args(p)
    p.add_argument("--trajectory", required=True, help="trajectory CSV")
    p.add_argument("--out", required=True, help="output policy JSON")
    p.add_argument("--qf", choices=("care", "tracking"), default="care",
                   help="terminal cost: stationary Riccati solution (care) "
                        "or the tracking weight itself")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("estimate", help="shrink funnel thresholds from rollouts")
    _add_setup_args(p)
    p.add_argument("--policy", required=True, help="policy JSON")
    p.add_argument("--out", required=True, help="output funnel JSON")
    p.add_argument("--sims", type=int, default=None, help="number of rollouts")
    p.add_argument("--alpha", type=float, default=None,
                   help="fuel margin multiplier (accepts inf)")
    p.add_argument("--beta", type=float, default=None,
                   help="bootstrap inlet multiplier")
    p.add_argument("--parallel", action="store_true",
                   help="batched rollouts with merged shrinkage")
    p.add_argument("--sequential", action="store_true",
                   help="force one-at-a-time rollouts (overrides the config)")
    p.add_argument("--batch", type=int, default=None,
                   help="rollouts per parallel batch")
    p.add_argument("--deadband", action="store_true",
                   help="apply the scenario's actuator deadband")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify", help="membership check with fresh rollouts")
    _add_setup_args(p)
    p.add_argument("--policy", required=True, help="policy JSON")
    p.add_argument("--funnel", required=True, help="funnel JSON")
    p.add_argument("--out", required=True, help="per-trial report CSV")
    p.add_argument("--n-check", type=int, default=None,
                   help="number of verification rollouts")
    p.add_argument("--deadband", action="store_true",
                   help="apply the scenario's actuator deadband")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="SVG figures for funnels")
    p.add_argument("funnels", nargs="+", help="funnel JSON files")
    p.add_argument("--trajectory", default=None,
                   help="nominal trajectory CSV (re-centers sections and "
                        "adds an overlay)")
    p.add_argument("--overlay", action="append", default=None,
                   help="rollout CSV to overlay (repeatable)")
    p.add_argument("--axes", default="0,1",
                   help="state indices of the section plane, e.g. 0,1")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except (SolverError, NumericalError, EstimationError,
            IndeterminateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
