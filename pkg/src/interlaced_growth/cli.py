"""Command-line entry point.

Exit codes: 0 success, 1 a checked property failed, 2 bad usage or config.
Data goes to files under ``--out`` (and small results to stdout); progress
lines go to stderr unless ``--quiet``.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness, io
from .dynamics import iter_event_chunks, run
from .hamiltonian import DomainError, SlopeVector, rho_residual, solve_rho, speed, speed_gradient
from .hjsolver import comparison_check, slope_class_check, solve
from .lattice import export_tiling, tiling_to_csv, tiling_to_json

log = logging.getLogger("interlaced_growth")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _progress(args):
    if args.quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _outdir(args, cfg=None) -> Path:
    out = Path(args.out or (cfg.output if cfg is not None else "out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _config(args, required: bool = True):
    if args.config is None:
        if required:
            raise UsageError(f"{args.command} needs --config")
        return None
    cfg = harness.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _seeds(args, default=(1,)):
    if args.seed is not None:
        return [args.seed]
    return list(default)


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    L = args.L or cfg.L[0]
    seed = cfg.seeds[0]
    f = cfg.macro_profile()
    T_micro = L * cfg.T
    r = int(math.ceil(L * cfg.R))
    depth = int(math.ceil(cfg.alpha * T_micro))
    win = harness.simulation_window(((-r, -r), (r, r)), depth, T_micro, cfg.M)
    init = win.particles(harness.discretized_height(f, L))
    X1, X2 = harness.comparison_points(cfg.R, cfg.sample_spacing)
    pts = (np.rint(L * X1).astype(np.int64), np.rint(L * X2).astype(np.int64))
    monitors = [tuple(map(int, m.split(","))) for m in args.monitor] or [(0, 0)]
    times = [L * t for t in cfg.times]
    prog = _progress(args)
    if prog:
        prog(f"simulate L={L} seed={seed}: {win.events.n_sites} sites, horizon {T_micro:g}")
    res = run(
        init,
        iter_event_chunks(win.events, T_micro, seed),
        times,
        monitored=monitors,
        snapshot_points=pts,
        validate=True,
    )
    rows = []
    for t, snap in zip(cfg.times, res.snapshots):
        rows.extend((float(t), int(a), int(b), int(h)) for a, b, h in zip(pts[0], pts[1], snap))
    io.write_csv(out / "heights.csv", ["t", "x1", "x2", "H"], rows)
    io.write_trajectories(out / "trajectories.csv", res.final.initial_heights, res.trajectories)
    report = {
        "command": "simulate",
        "config": cfg.to_dict(),
        "L": L,
        "seed": seed,
        "jumps": res.jumps,
        "underflows": res.underflows,
        "window": {"depth": win.depth, "lines": win.events.n_lines, "sites": win.events.n_sites},
    }
    io.write_json(out / "report.json", report)
    if res.underflows:
        log.warning("%d clock rings hit the storage boundary", res.underflows)
        return EXIT_FAIL
    return EXIT_OK


def cmd_speed(args) -> int:
    out = _outdir(args)
    rho = SlopeVector(*args.rho)
    seeds = _seeds(args, range(1, args.n_seeds + 1))
    res = harness.measure_speed(
        rho, args.L, args.T, seeds, M=args.M, alpha=args.alpha,
        threads=args.threads, progress=_progress(args),
    )
    io.write_json(out / "speed.json", {"command": "speed", **res.to_dict()})
    io.write_csv(out / "speed.csv", ["seed", "rate"], zip(seeds, res.rates))
    print(f"rate {res.mean:.6f} +- {res.stderr:.6f}  (v = {res.theory:.6f}, underflows {res.underflows})")
    return EXIT_OK if res.underflows == 0 else EXIT_FAIL


def cmd_hydro(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    rep = harness.hydro_convergence(cfg, threads=args.threads, progress=_progress(args))
    io.write_json(out / "report.json", {"command": "hydro", "config": cfg.to_dict(), **rep.to_dict()})
    io.write_csv(out / "errors.csv", ["L", "t", "sup_error"], rep.rows)
    for L, e in zip(rep.L, rep.errors):
        print(f"L={L:<6d} sup error {e:.6f}")
    print("verdict:", "pass" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_hj_solve(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    f = cfg.macro_profile()
    dom = ((-cfg.R, cfg.R), (-cfg.R, cfg.R))
    prog = _progress(args)
    cb = (lambda n, N: prog(f"hj-solve step {n}/{N}")) if prog else None
    sol = solve(f, cfg.T, dom, cfg.dx, cfg.times, progress=cb)
    io.save_grid(out / "grid.bin", sol)
    if args.csv:
        io.write_grid_csv(out / "grid.csv", sol)
    slopes = slope_class_check(sol, cfg.M)
    report = {
        "command": "hj-solve",
        "config": cfg.to_dict(),
        "dt": sol.dt,
        "eps": sol.eps,
        "slope_class": slopes._asdict(),
    }
    if args.compare_shift:
        # u(f) <= u(f + c) for c >= 0
        v = comparison_check(f, f.shifted(args.compare_shift), cfg.T, dom, cfg.dx, cfg.times)
        report["comparison"] = v._asdict()
        slopes = slopes if v.ok else v
    io.write_json(out / "report.json", report)
    return EXIT_OK if slopes.ok else EXIT_FAIL


def cmd_rho_solve(args) -> int:
    rho = solve_rho((args.g1, args.g2, args.gt), args.M)
    r = rho_residual(rho, (args.g1, args.g2, args.gt))
    print(f"rho1 {rho.rho1!r}")
    print(f"rho2 {rho.rho2!r}")
    print(f"residual {max(abs(r[0]), abs(r[1]))!r}")
    return EXIT_OK


def cmd_speed_table(args) -> int:
    out = _outdir(args)
    cap = 1.0 - 1.0 / args.M
    n = args.n
    rows = []
    for i in range(1, n):
        for j in range(1, n):
            rho = SlopeVector(cap * i / n, cap * j / n)
            if rho.rho1 + rho.rho2 >= cap:
                continue
            d1, d2 = speed_gradient(rho)
            rows.append((rho.rho1, rho.rho2, speed(rho), d1, d2))
    io.write_csv(out / "speed_table.csv", ["rho1", "rho2", "v", "dv_drho1", "dv_drho2"], rows)
    print(f"{len(rows)} rows written to {out / 'speed_table.csv'}")
    return EXIT_OK


def cmd_check(args) -> int:
    out = _outdir(args)
    seeds = args.seeds or ([args.seed] if args.seed is not None else [42])
    rep = harness.property_battery(seeds, args.size, args.trials, progress=_progress(args))
    io.write_json(out / "report.json", {"command": "check", "size": args.size, "seeds": seeds, **rep.to_dict()})
    failing = {k: c.counterexamples for k, c in rep.checks.items() if not c.passed}
    if failing:
        io.write_json(out / "counterexamples.json", failing)
    print(rep.table())
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_export_tiling(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    L = args.L or cfg.L[0]
    r = args.radius
    f = cfg.macro_profile()
    T_micro = args.time
    depth = int(math.ceil(cfg.alpha * T_micro))
    win = harness.simulation_window(((-r, -r), (r, r)), depth, T_micro, cfg.M)
    init = win.particles(harness.discretized_height(f, L))
    if T_micro > 0:
        res = run(init, iter_event_chunks(win.events, T_micro, cfg.seeds[0]), validate=True)
        init = res.final.cfg
    cells = export_tiling(init)
    tiling_to_csv(cells, out / "tiling.csv")
    (out / "tiling.json").write_text(tiling_to_json(cells), encoding="utf-8")
    print(f"{len(cells)} cells written to {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--seed", type=int, help="override the seed list with a single seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="seed-parallel workers")
    common.add_argument("--quiet", action="store_true", help="no progress output")

    p = argparse.ArgumentParser(prog="interlaced-growth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="one seeded run from a config profile")
    s.add_argument("--L", type=int, help="scale (default: first L of the config)")
    s.add_argument("--monitor", action="append", default=[], metavar="X1,X2", help="record jump times at a point")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("speed", parents=[common], help="measure growth speed from a linear profile")
    s.add_argument("--rho", type=float, nargs=2, required=True, metavar=("RHO1", "RHO2"), help="slope in T_M")
    s.add_argument("--L", type=int, default=256, help="scale (default %(default)s)")
    s.add_argument("--T", type=float, default=1.0, help="rescaled time horizon")
    s.add_argument("--M", type=int, default=4)
    s.add_argument("--alpha", type=float, default=harness.DEFAULT_ALPHA, help="cushion factor (default %(default)s)")
    s.add_argument("--n-seeds", type=int, default=8, help="seeds 1..N unless --seed is given")
    s.set_defaults(func=cmd_speed)

    s = sub.add_parser("hydro", parents=[common], help="convergence of rescaled heights to the PDE solution")
    s.set_defaults(func=cmd_hydro)

    s = sub.add_parser("hj-solve", parents=[common], help="solve the Hamilton-Jacobi equation for a config profile")
    s.add_argument("--csv", action="store_true", help="also write the grid as CSV")
    s.add_argument("--compare-shift", type=float, default=0.0, help="also check order against f + shift")
    s.set_defaults(func=cmd_hj_solve)

    s = sub.add_parser("rho-solve", parents=[common], help="slope with prescribed space-time gradient")
    s.add_argument("--g1", type=float, required=True, help="gradient in x1")
    s.add_argument("--g2", type=float, required=True, help="gradient in x2")
    s.add_argument("--gt", type=float, required=True, help="time derivative (<= 0)")
    s.add_argument("--M", type=int, help="also require the result in T_M")
    s.set_defaults(func=cmd_rho_solve)

    s = sub.add_parser("speed-table", parents=[common], help="tabulate v and its gradient over T_M")
    s.add_argument("--M", type=int, default=4)
    s.add_argument("--n", type=int, default=40, help="grid divisions per axis")
    s.set_defaults(func=cmd_speed_table)

    s = sub.add_parser("check", parents=[common], help="randomised property battery")
    s.add_argument("--size", choices=sorted(harness.SIZES), default="small")
    s.add_argument("--seeds", type=int, nargs="+", help="battery seeds (default 42)")
    s.add_argument("--trials", type=int, default=1000, help="trials per check, split over seeds")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("export-tiling", parents=[common], help="rhombus tiling of a (possibly evolved) configuration")
    s.add_argument("--L", type=int)
    s.add_argument("--radius", type=int, default=8, help="half side of the exported dual box")
    s.add_argument("--time", type=float, default=0.0, help="microscopic time to evolve first")
    s.set_defaults(func=cmd_export_tiling)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, harness.ConfigError, DomainError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
