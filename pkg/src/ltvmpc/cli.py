"""Command line entry point: ``ltvmpc run|validate|presets``."""

import argparse
from dataclasses import replace
import logging
import os
from pathlib import Path
import sys
import warnings

from . import control_loop as cl
from . import report
from . import scenarios as sc
from .conic import SolverOptions
from .synthesis import InitialInfeasibleError
from .uncertainty import AssumptionError

OUTPUT_ENV = "LTVMPC_OUTPUT"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_MONITOR = 4

log = logging.getLogger("ltvmpc")


def build_parser():
    p = argparse.ArgumentParser(prog="ltvmpc", description="Adaptive data-driven min-max MPC for LTV systems.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("presets", help="list built-in scenarios")

    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("--scenario", required=True, help="preset name or TOML file")

    r = sub.add_parser("run", help="run a scenario and write CSV/JSON output")
    r.add_argument("--scenario", required=True, help="preset name or TOML file")
    r.add_argument("--mode", choices=cl.MODES, help="override the scenario mode")
    r.add_argument("--steps", type=int)
    r.add_argument("--seeds", type=int, help="number of seeds, counted up from --seed")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--window", type=int, help="data window length (0 = unbounded)")
    r.add_argument("--c", type=float, help="constant c of the noisy problems")
    r.add_argument("--bootstrap", action="store_true",
                   help="switch to bootstrap mode when the prior-only problem is infeasible")
    r.add_argument("--compare-static", action="store_true",
                   help="also run the static prior-only controller on the same seeds")
    r.add_argument("--strict", action="store_true", help="exit 4 on any monitor violation")
    r.add_argument("--output", default=os.environ.get(OUTPUT_ENV, "out"),
                   help=f"output directory (default ${OUTPUT_ENV} or ./out)")
    r.add_argument("--solver-tol", type=float, default=1e-8)
    r.add_argument("--max-iters", type=int, default=200)
    r.add_argument("--workers", type=int, default=1, help="parallel runs")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    r.add_argument("--no-timings", action="store_true",
                   help="leave solve_time_ms empty so repeated runs are byte-identical")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def _configure(args):
    cfg = sc.parse_scenario(args.scenario)
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.window is not None:
        changes["window"] = args.window or None
    if args.c is not None:
        changes["c"] = args.c
    if args.seeds is not None:
        if args.seeds < 1:
            raise sc.ScenarioError("seeds", "must be at least 1")
        changes["seeds"] = list(range(args.seed, args.seed + args.seeds))
    elif args.seed:
        changes["seeds"] = [args.seed]
    return replace(cfg, **changes).validate()


def cmd_presets(_args, out=None):
    out = out or sys.stdout
    for name, cfg in sc.PRESETS.items():
        print(f"{name:24s} mode={cfg.mode:15s} n={cfg.n} m={cfg.m} steps={cfg.steps}", file=out)
    return EXIT_OK


def cmd_validate(args, out=None):
    out = out or sys.stdout
    cfg = sc.parse_scenario(args.scenario)
    print(f"{cfg.name}: ok", file=out)
    return EXIT_OK


def cmd_run(args, out=None):
    out = out or sys.stdout
    cfg = _configure(args)
    solver = SolverOptions(feasibility_tol=args.solver_tol, max_iters=args.max_iters)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    mode = cfg.mode
    notes = []
    try:
        runs = sc.run_batch(cfg, cfg.seeds, mode, solver, args.workers)
    except InitialInfeasibleError as exc:
        if not args.bootstrap or mode == cl.BOOTSTRAP:
            print(f"initial problem infeasible: {exc}; rerun with --bootstrap", file=sys.stderr)
            return EXIT_INFEASIBLE
        notes.append(f"prior-only problem infeasible in mode {mode}; switched to bootstrap")
        mode = cl.BOOTSTRAP
        runs = sc.run_batch(cfg, cfg.seeds, mode, solver, args.workers)

    families = {mode: runs}
    baseline = comparison = None
    if args.compare_static and mode in sc.STATIC_OF:
        baseline = sc.run_batch(cfg, cfg.seeds, sc.STATIC_OF[mode], solver, args.workers)
        families[sc.STATIC_OF[mode]] = baseline
        comparison = cl.compare_costs(runs, baseline)
    elif args.compare_static:
        notes.append(f"no static baseline for mode {mode}")

    for fam, batch in families.items():
        for s in batch:
            report.write_trajectory_csv(
                s, outdir / f"{cfg.name}_{fam}_seed{s.seed}.csv", timings=not args.no_timings
            )
    for s in runs:
        if s.mode == cl.BOOTSTRAP:
            notes.append(
                f"seed {s.seed}: prior-only problem "
                f"{'infeasible' if s.initial_infeasible else 'feasible'}; bootstrap problem feasible "
                + (f"from t = {s.feasible_from}" if s.feasible_from is not None else "not for a tail of the run")
            )
    doc = report.summary_document(cfg.name, mode, runs, baseline, comparison, notes)
    report.write_summary_json(doc, outdir / "summary.json")
    plots = outdir / "plots"
    report.emit_plot_data(families, plots)
    if not args.no_figures:
        report.render_figures(families, plots)

    print(f"{cfg.name} [{mode}] seeds={cfg.seeds}", file=out)
    for s in runs:
        print(f"  seed {s.seed}: cost={s.closed_loop_cost:.6g} |x_T|={s.final_state_norm:.3g} "
              f"fallbacks={s.fallback_count} infeasible={s.infeasible_count}", file=out)
    if comparison is not None:
        print(f"  mean improvement over static: {100 * comparison.mean_improvement:.2f}%", file=out)
    print(f"  output: {outdir}", file=out)

    verdicts = [report.monitor_verdicts(s) for s in runs + (baseline or [])]
    if args.strict and any(report.has_violation(v) for v in verdicts):
        print("monitor violation (see summary.json)", file=sys.stderr)
        return EXIT_MONITOR
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "verbose", False):
        warnings.filterwarnings("ignore", module="cvxpy")
    handler = {"presets": cmd_presets, "validate": cmd_validate, "run": cmd_run}[args.command]
    try:
        return handler(args)
    except (sc.ScenarioError, AssumptionError, ValueError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
