"""Command-line entry point: ``synapse-ssd run | compare | calibrate``.

Exit codes: 0 on success, 2 on invalid input, 3 on solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import scenarios
from .errors import ConfigWarning, SolverError, SynapseError
from .series import TimeSeries

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3


def _solver_list(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog="synapse-ssd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write CSVs, report.json and a plot")
    run.add_argument("scenario", help="scenario JSON path or bundled scenario name")
    run.add_argument("--out", default=None, help="output directory (default: ./out/<name>)")
    run.add_argument("--solvers", type=_solver_list, default=None,
                     help="comma-separated subset of ssd,pbs,oracle")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--runs", type=int, default=None, help="PBS repetitions per curve")
    run.add_argument("--backend", choices=("numba", "numpy"), default=None)
    run.add_argument("--no-plot", action="store_true")

    cmp_ = sub.add_parser("compare", help="deviation between two bound-count CSVs")
    cmp_.add_argument("a", help="reference CSV")
    cmp_.add_argument("b")

    cal = sub.add_parser("calibrate", help="fit kappa_a to the PBS steady state")
    cal.add_argument("scenario")
    cal.add_argument("--out", default=None, help="path of the calibrated scenario JSON")
    cal.add_argument("--seed", type=int, default=None)
    cal.add_argument("--runs", type=int, default=None)
    return parser


def _cmd_run(args):
    sc = scenarios.load_scenario(args.scenario)
    out = Path(args.out) if args.out else Path("out") / sc.name
    result = scenarios.run_scenario(sc, out_dir=out, solvers=args.solvers, seed=args.seed,
                                    n_runs=args.runs, backend=args.backend, plot=not args.no_plot)
    for point in result.report.points:
        for solver, summary in point["solvers"].items():
            print(f"{point['label']:>20} {solver:>6}  peak {summary['peak']!r} at "
                  f"{summary['t_peak']!r} us  steady {summary['steady_state']!r}")
    for f in result.report.failures:
        print(f"FAILED {f['label']} {f['solver']}: {f['error']}", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_OK if result.ok else EXIT_SOLVER


def _cmd_compare(args):
    a = TimeSeries.from_csv(args.a)
    b = TimeSeries.from_csv(args.b)
    print(json.dumps(scenarios.compare(a, b), indent=2))
    return EXIT_OK


def _cmd_calibrate(args):
    sc = scenarios.load_scenario(args.scenario)
    res = scenarios.calibrate(sc, seed=args.seed, n_runs=args.runs)
    out = Path(args.out) if args.out else Path(f"{sc.name}_calibrated.json")
    out.write_text(json.dumps(scenarios.scenario_to_dict(res.scenario), indent=2) + "\n")
    print(json.dumps({
        "kappa_a": res.kappa_a,
        "kappa_a_helper": res.kappa_a_helper,
        "relative_to_helper": res.relative_to_helper,
        "steady_state": res.steady_state,
        "steady_state_se": res.steady_state_se,
        "n_runs": res.n_runs,
        "written": str(out),
    }, indent=2))
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "compare": _cmd_compare, "calibrate": _cmd_calibrate}[args.command]
    with warnings.catch_warnings():
        warnings.simplefilter("always", ConfigWarning)
        try:
            return handler(args)
        except SolverError as exc:
            print(f"solver error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        except (SynapseError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
