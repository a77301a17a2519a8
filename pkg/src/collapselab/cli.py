"""
Batch command-line driver.

Subcommands: run (execute a config), meanfield (run, restricted to mean-field
configs), diagnose (post-process a finished run directory), plot (SVG line
plot of a trace column), validate (schema check only). Exit codes: 0 success,
1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (backward_rescale, check_eps_regularity, detect_bubbles,
                          envelope_mass_trace, rescaled_second_moment)
from .evolution import SchemeViolation, StepControl, run
from .grids import CartesianGrid, ScalarField, integrate, make_cartesian_grid, \
    make_disk_grid, make_radial_grid
from .io import (atomic_write, read_field, read_json, read_trace, sha256_digest,
                 svg_line_plot, write_field, write_json, write_trace)
from .meanfield import NewtonDivergence, continue_branch, solve_meanfield, to_density
from .observables import TraceTable, free_energy
from .poisson import PoissonSolveError
from .radial import (MonotonicityViolation, RadialMassProfile, RadialRunControl,
                     estimate_blowup_time, extract_collapse_mass, gaussian_profile,
                     reconstruct_density, run_radial)
from .testfunctions import TestFunction

OUTPUT_ROOT_ENV = "COLLAPSELAB_OUTPUT_ROOT"
NUMERICAL_ERRORS = (SchemeViolation, NewtonDivergence, PoissonSolveError,
                    MonotonicityViolation)


def _outdir(cfg: RunConfig, override: Optional[str]) -> str:
    root = override or os.environ.get(OUTPUT_ROOT_ENV, ".")
    return os.path.join(root, cfg.output_dir)


def _manifest(outdir: str, cfg_dict: dict, halt: str, started: str) -> None:
    files = {}
    for name in sorted(os.listdir(outdir)):
        if name == "manifest.json" or name.startswith(".tmp-"):
            continue
        files[name] = sha256_digest(os.path.join(outdir, name))
    write_json(os.path.join(outdir, "manifest.json"), {
        "config": cfg_dict,
        "version": __version__,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "halt": halt,
        "files": files,
    })


def _initial_density(cfg: RunConfig, grid: CartesianGrid) -> ScalarField:
    kind = cfg.initial_data
    if kind == "file":
        return read_field(cfg.initial_file)
    X, Y = grid.cell_centers()
    act = grid.active()
    if kind == "uniform":
        u = np.where(act, 1.0, 0.0)
    elif kind == "gaussian":
        cx, cy = cfg.center
        u = np.where(act, np.exp(-((X - cx) ** 2 + (Y - cy) ** 2)
                                 / (2.0 * cfg.width ** 2)), 0.0)
    elif kind == "meanfield":
        state = solve_meanfield(cfg.mass, ScalarField(grid, np.zeros((grid.nx, grid.ny))))
        return to_density(state)
    else:
        raise ConfigError([f"unsupported initial data '{kind}'"])
    f = ScalarField(grid, u)
    return f.with_values(u * (cfg.mass / integrate(f)))


def _run_evolve2d(cfg: RunConfig, outdir: str) -> str:
    if cfg.domain == "disk":
        grid = make_disk_grid(cfg.R, cfg.n)
    else:
        grid = make_cartesian_grid(cfg.R, cfg.R, cfg.n, cfg.n)
    u0 = _initial_density(cfg, grid)
    probes = [TestFunction(kind=p["kind"],
                           center=tuple(p.get("center", (0.0, 0.0))),
                           radius=p.get("radius", 1.0),
                           amplitude=p.get("amplitude", 1.0))
              for p in cfg.probes]
    ctrl = StepControl(
        dt_max=cfg.dt_max, cfl_safety=cfg.cfl_safety,
        blowup_sup_threshold=cfg.blowup_sup_threshold, max_steps=cfg.max_steps,
        horizon=cfg.horizon, snapshot_interval=cfg.snapshot_interval,
        semi_implicit=cfg.semi_implicit,
    )
    snapshots, table, halt = run(u0, ctrl, probes)
    write_trace(os.path.join(outdir, "trace.csv"), table)
    for k, state in enumerate(snapshots):
        write_field(os.path.join(outdir, f"snapshot_{k:04d}.csv"), state.u)
    return halt


def _run_radial(cfg: RunConfig, outdir: str) -> str:
    grid = make_radial_grid(cfg.R, cfg.n, cfg.grading)
    p0 = gaussian_profile(grid, cfg.mass, cfg.width)
    ctrl = RadialRunControl(
        cfl=cfg.cfl_safety, dt_max=cfg.dt_max, horizon=cfg.horizon,
        sup_threshold=cfg.blowup_sup_threshold, max_steps=cfg.max_steps,
        snapshot_factor=cfg.snapshot_factor,
    )
    trace, snaps, halt = run_radial(p0, ctrl)
    table = TraceTable(columns=["time", "sup_u"])
    for t, s in trace:
        table.append([t, s])
    write_trace(os.path.join(outdir, "trace.csv"), table)
    for k, p in enumerate(snaps):
        write_field(os.path.join(outdir, f"profile_{k:04d}.csv"),
                    ScalarField(p.grid, p.m, p.t))
    fit = estimate_blowup_time(trace)
    report = {"blowup": fit.blowup, "T_est": fit.T_est,
              "fit_residual": fit.fit_residual, "window": list(fit.window)}
    if fit.blowup:
        est = extract_collapse_mass(snaps[-1], fit.T_est)
        report["collapse_estimate"] = est.to_dict()
    write_json(os.path.join(outdir, "collapse_estimate.json"), report)
    return halt


def _run_meanfield(cfg: RunConfig, outdir: str) -> str:
    grid = make_radial_grid(cfg.R, cfg.n, 1.0)
    zero = ScalarField(grid, np.zeros(grid.n + 1))
    if cfg.lam_end is not None:
        states = continue_branch(grid, cfg.mass, cfg.lam_end, cfg.branch_steps,
                                 tol=cfg.newton_tol)
        table = TraceTable(columns=["time", "arclength", "lambda", "v_center",
                                    "residual", "free_energy"])
        for k, st in enumerate(states):
            table.append([float(k), st.branch_parameter, st.lam,
                          float(st.v.values[0]), st.newton_residual,
                          free_energy(to_density(st))])
        write_trace(os.path.join(outdir, "branch.csv"), table)
        last = states[-1]
    else:
        last = solve_meanfield(cfg.mass, zero, tol=cfg.newton_tol)
    write_field(os.path.join(outdir, "potential.csv"), last.v)
    write_field(os.path.join(outdir, "density.csv"), to_density(last))
    write_json(os.path.join(outdir, "meanfield.json"), {
        "lambda": last.lam, "newton_residual": last.newton_residual,
        "v_center": float(last.v.values[0]),
    })
    return "converged"


def _diagnose(cfg: RunConfig, outdir: str) -> str:
    run_dir = cfg.run_dir
    manifest = read_json(os.path.join(run_dir, "manifest.json"))
    mode = manifest["config"]["mode"]
    names = sorted(manifest["files"])
    if mode == "radial":
        report = read_json(os.path.join(run_dir, "collapse_estimate.json"))
        if not report["blowup"]:
            write_json(os.path.join(outdir, "diagnostics.json"),
                       {"verdict": "no_blowup"})
            return "no_blowup"
        T = report["T_est"]
        profiles = []
        for name in names:
            if name.startswith("profile_"):
                f = read_field(os.path.join(run_dir, name))
                profiles.append(RadialMassProfile(f.grid, f.values, f.time))
        ladder_cols = ["time"] + [f"b={b:g}" for b in cfg.b_ladder]
        env = TraceTable(columns=ladder_cols)
        for p in profiles:
            if p.t >= T:
                continue
            Rt = np.sqrt(T - p.t)
            env.append([p.t] + [p.mass_at(b * Rt) for b in cfg.b_ladder])
        write_trace(os.path.join(outdir, "envelope_trace.csv"), env)
        mom = TraceTable(columns=["time", "s", "I_b"])
        b = max(cfg.b_ladder)
        for p in profiles:
            if p.t >= T:
                continue
            snap = backward_rescale(reconstruct_density(p), (0.0, 0.0), T, b_window=b)
            mom.append([p.t, snap.s, rescaled_second_moment(snap, b)])
        write_trace(os.path.join(outdir, "moment_trace.csv"), mom)
        write_json(os.path.join(outdir, "diagnostics.json"),
                   {"verdict": "blowup", "T_est": T, "b_ladder": list(cfg.b_ladder)})
        return "diagnosed"
    # 2D run: bubble decomposition and an epsilon-regularity sweep
    fields = [read_field(os.path.join(run_dir, name))
              for name in names if name.startswith("snapshot_")]
    trace = read_trace(os.path.join(run_dir, "trace.csv"))
    sups = np.array([f.max() for f in fields])
    times = np.array([f.time for f in fields])
    fit = estimate_blowup_time(np.column_stack([times, sups]), window=len(times))
    out: Dict[str, object] = {"blowup": fit.blowup, "T_est": fit.T_est}
    if fit.blowup:
        last = fields[-1]
        act = last.grid.active()
        X, Y = last.grid.cell_centers()
        kmax = int(np.argmax(np.where(act, last.values, -np.inf)))
        x0 = (float(X.flat[kmax]), float(Y.flat[kmax]))
        snap = backward_rescale(last, x0, fit.T_est, b_window=16.0)
        out["bubbles"] = detect_bubbles(snap, eps=cfg.eps, eps0=cfg.eps0).to_dict()
    else:
        rng = np.random.default_rng(cfg.seed)
        reports = []
        g = fields[0].grid
        for _ in range(20):
            x0 = (g.x0 + rng.uniform(0.3, 0.7) * g.Lx,
                  g.y0 + rng.uniform(0.3, 0.7) * g.Ly)
            R = rng.uniform(0.05, 0.2) * min(g.Lx, g.Ly)
            rep = check_eps_regularity(fields, x0, R, cfg.eps0, cfg.sigma0)
            reports.append(rep.to_dict())
        out["eps_regularity"] = reports
    write_json(os.path.join(outdir, "diagnostics.json"), out)
    return "diagnosed"


_RUNNERS = {"evolve2d": _run_evolve2d, "radial": _run_radial,
            "meanfield": _run_meanfield, "diagnose": _diagnose}


def _cmd_run(args, require_mode: Optional[str] = None) -> int:
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return 1
    if require_mode and cfg.mode != require_mode:
        print(f"this subcommand requires mode '{require_mode}'", file=sys.stderr)
        return 1
    outdir = _outdir(cfg, args.output_root)
    os.makedirs(outdir, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    try:
        halt = _RUNNERS[cfg.mode](cfg, outdir)
    except NUMERICAL_ERRORS as exc:
        write_json(os.path.join(outdir, "failure.json"),
                   {"error": type(exc).__name__, "message": str(exc)})
        _manifest(outdir, cfg.as_dict(), f"failed: {exc}", started)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    _manifest(outdir, cfg.as_dict(), halt, started)
    print(f"{cfg.mode}: halt={halt} output={outdir}")
    return 0


def _cmd_validate(args) -> int:
    try:
        with open(args.config) as fh:
            parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return 1
    print("config ok")
    return 0


def _cmd_plot(args) -> int:
    try:
        table = read_trace(args.trace)
    except OSError as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return 1
    if args.y not in table.columns:
        print(f"no column '{args.y}'; available: {', '.join(table.columns)}",
              file=sys.stderr)
        return 1
    out = args.out or os.path.splitext(args.trace)[0] + f"_{args.y}.svg"
    svg = svg_line_plot(table.column("time"), table.column(args.y), "time", args.y)
    atomic_write(out, svg)
    print(out)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="collapse-lab",
        description="Numerical laboratory for collapse mass quantization in the "
                    "2D Smoluchowski-Poisson system")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("run", "execute a run config"),
                            ("meanfield", "execute a mean-field config"),
                            ("diagnose", "post-process a run directory")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--output-root", default=None,
                       help=f"output root (default: ${OUTPUT_ROOT_ENV} or cwd)")

    p = sub.add_parser("validate", help="schema-check a config")
    p.add_argument("config")

    p = sub.add_parser("plot", help="SVG line plot of a trace column")
    p.add_argument("trace")
    p.add_argument("--y", required=True, help="column to plot against time")
    p.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "plot":
        return _cmd_plot(args)
    if args.command == "meanfield":
        return _cmd_run(args, require_mode="meanfield")
    if args.command == "diagnose":
        return _cmd_run(args, require_mode="diagnose")
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
