"""Command-line entry point.

::

    nsdem run --scenario ball_on_plane --solver ebp --steps 2000 --summary-out s.csv
    nsdem run --scene my.scene --solver sal --trace-out t.csv
    nsdem sweep --scenario sediment4 --solver ebp --alphas 0.2,0.5,1,2,5 --steps 1000

Unconverged steps are reported in the output, never turned into a failing
exit status.  Bad input (unknown scenario, unreadable or invalid scene file,
bad numbers) exits with status 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiments import (SCENARIOS, PackingError, ScenarioSpec, build_scenario,
                          rho_sweep, simulate, solver_config, write_summary, write_sweep,
                          write_trace, write_positions)
from .kinematics import initial_state
from .nlgs import SolverConfig
from .scene import SceneError, load_scene

SOLVERS = ("sbp", "sal", "ebp", "eal")


def _positive_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _alpha_list(text):
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}")
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("alphas must be positive numbers")
    return values


def build_parser():
    p = argparse.ArgumentParser(prog="nsdem", description="Rigid-sphere contact dynamics runs.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scene with one solver")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene file")
    src.add_argument("--scenario", choices=SCENARIOS, help="built-in scenario")
    r.add_argument("--solver", choices=SOLVERS, required=True, type=str.lower)
    r.add_argument("--alpha", type=float)
    r.add_argument("--steps", type=_positive_int)
    r.add_argument("--dt", type=float)
    r.add_argument("--eps-glob", type=float)
    r.add_argument("--max-nlgs", type=int)
    r.add_argument("--eps-newt", type=float)
    r.add_argument("--max-newton", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--warm-start", action="store_true")
    r.add_argument("--paper-typo-mode", action="store_true",
                   help="use e_n in the tangential restitution numerator")
    r.add_argument("--trace-out", help="CSV of the last step's per-iteration error terms")
    r.add_argument("--summary-out", help="summary CSV (printed to stdout when omitted)")
    r.add_argument("--positions-out", help="CSV of body coordinates after every step")

    s = sub.add_parser("sweep", help="run one solver for several descent factors alpha")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--solver", choices=SOLVERS, required=True, type=str.lower)
    s.add_argument("--alphas", type=_alpha_list, required=True)
    s.add_argument("--steps", type=_positive_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.add_argument("--out", help="sweep CSV (printed to stdout when omitted)")
    return p


def _spec(args):
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "dt", None) is not None:
        kw["dt"] = args.dt
    if getattr(args, "steps", None) is not None:
        kw["steps"] = args.steps
    return ScenarioSpec(args.scenario, **kw)


def _cmd_run(args):
    overrides = dict(alpha=args.alpha, eps_newt=args.eps_newt, max_newton=args.max_newton,
                     warm_start=args.warm_start, paper_typo_mode=args.paper_typo_mode)
    if args.scenario:
        spec = _spec(args)
        scene = build_scenario(spec)
        if args.eps_glob is not None:
            overrides["eps_glob"] = args.eps_glob
        if args.max_nlgs is not None:
            overrides["max_nlgs"] = args.max_nlgs
        config = solver_config(spec, args.solver.upper(), **overrides)
        steps = spec.steps
    else:
        scene = load_scene(args.scene)
        if args.dt is not None:
            scene = dataclasses.replace(scene, dt=args.dt)
        kw = {k: v for k, v in overrides.items() if v is not None}
        if args.eps_glob is not None:
            kw["eps_glob"] = args.eps_glob
        if args.max_nlgs is not None:
            kw["max_nlgs"] = args.max_nlgs
        config = SolverConfig(method=args.solver.upper(), **kw)
        steps = 1 if args.steps is None else args.steps

    positions = [(0, initial_state(scene))] if args.positions_out else None

    def watch(k, state, rep):
        if positions is not None:
            positions.append((k + 1, state.copy()))

    result = simulate(scene, config, steps, keep_reports=False, callback=watch)
    last = result.reports[-1]
    write_summary(args.summary_out or sys.stdout, [result.row])
    if args.trace_out and last is not None:
        write_trace(args.trace_out, last, steps - 1)
    if positions is not None:
        write_positions(args.positions_out, positions)
    return 0


def _cmd_sweep(args):
    spec = _spec(args)
    rows = rho_sweep(spec, args.solver.upper(), args.alphas, jobs=args.jobs)
    write_sweep(args.out or sys.stdout, rows)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except (SceneError, PackingError, ValueError, OSError) as exc:
        print(f"nsdem: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
