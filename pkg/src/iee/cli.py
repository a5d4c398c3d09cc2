"""Command-line entry point: ``iee fit``, ``iee simulate`` and ``iee report``.

Exit status: 0 success, 1 invalid input or I/O failure, 2 no convergence
(the report is still written), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report
from .dataset import PairOnly, build_grouping, read_csv, read_grouping_spec, write_csv
from .driver import IeeOptions, fit_iee
from .errors import DatasetError, GroupingError, IEEError, NotConverged
from .mean_model import Linear, LogisticRandomIntercept
from .simulation import ESTIMATORS, generate, monte_carlo, read_spec

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Report bad arguments with the input-error status, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not x > 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be > 0")
    return x


def _positive_int(text: str) -> int:
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if x < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return x


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of numbers") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iee", description="Iterative estimating equations for longitudinal data.")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a mean model to a longitudinal CSV file")
    fit.add_argument("--data", required=True, type=Path, help="CSV with columns subject,visit,y,x1,...")
    fit.add_argument("--grouping", type=Path, help="grouping spec JSON (default: one class per visit pair)")
    fit.add_argument("--model", choices=("linear", "logistic-ri"), default="linear")
    fit.add_argument("--sigma", type=float, default=1.0, help="random-intercept s.d. for logistic-ri")
    fit.add_argument("--quad-order", type=_positive_int, default=20, help="Gauss-Hermite nodes for logistic-ri")
    fit.add_argument("--beta-start", type=_float_list, help="starting beta for nonlinear models, e.g. 0,0.5")
    fit.add_argument("--tol", type=_positive_float, default=1e-4, help="convergence tolerance")
    fit.add_argument("--max-iters", type=_positive_int, default=100, help="maximum outer iterations")
    fit.add_argument("--one-step", action="store_true", help="stop after one covariance update and refit")
    fit.add_argument("--out", type=Path, help="output file (default: stdout)")
    fit.add_argument("--table", action="store_true", help="write a text table instead of JSON")
    fit.add_argument("--trace", action="store_true", help="include the iteration trace in the JSON")

    sim = sub.add_parser("simulate", help="run a seeded Monte Carlo study")
    sim.add_argument("--spec", required=True, type=Path, help="scenario spec JSON")
    sim.add_argument("--reps", required=True, type=_positive_int, help="number of replications")
    sim.add_argument("--estimators", default=",".join(ESTIMATORS), help="comma-separated subset of ols,onestep,irls")
    sim.add_argument("--tol", type=_positive_float, default=1e-4, help="IRLS convergence tolerance")
    sim.add_argument("--max-iters", type=_positive_int, default=100, help="maximum IRLS outer iterations")
    sim.add_argument("--out", type=Path, help="output file (default: stdout)")
    sim.add_argument("--dump-data", type=Path, help="also write replication 0 as CSV")
    sim.add_argument("--table", action="store_true", help="write text tables instead of JSON")

    rep = sub.add_parser("report", help="render a saved fit or simulation report")
    rep.add_argument("--in", dest="input", required=True, type=Path, help="report JSON")
    rep.add_argument("--table", action="store_true", help="render text tables (default: normalized JSON)")
    return parser


def _emit(doc: dict, args) -> None:
    text = report.render(doc) if args.table else report.dumps(doc)
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _model(args):
    if args.model == "linear":
        return Linear()
    return LogisticRandomIntercept(sigma=args.sigma, quadrature_order=args.quad_order)


def cmd_fit(args) -> int:
    ds = read_csv(args.data)
    spec = read_grouping_spec(args.grouping) if args.grouping else PairOnly()
    g = build_grouping(ds, spec)
    if args.beta_start is not None and len(args.beta_start) != ds.p:
        raise _UsageError(f"--beta-start has {len(args.beta_start)} values, data has {ds.p} covariates")
    opts = IeeOptions(
        conv_tol=args.tol,
        max_outer_iters=args.max_iters,
        one_step_only=args.one_step,
        beta_start=args.beta_start,
    )
    try:
        res = fit_iee(ds, _model(args), g, opts)
    except NotConverged as exc:
        _emit(exc.result.to_dict(include_trace=args.trace), args)
        print(f"iee: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    _emit(res.to_dict(include_trace=args.trace), args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = read_spec(args.spec)
    estimators = [e for e in args.estimators.split(",") if e.strip()]
    opts = IeeOptions(conv_tol=args.tol, max_outer_iters=args.max_iters)
    summary = monte_carlo(spec, args.reps, estimators, opts)
    if args.dump_data is not None:
        write_csv(generate(spec, 0)[0], args.dump_data)
    _emit(summary.to_dict(), args)
    return EXIT_OK


def cmd_report(args) -> int:
    doc = report.load_report(args.input)
    args.out = None
    _emit(doc, args)
    return EXIT_OK


_COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DatasetError, GroupingError, report.SchemaError, _UsageError) as exc:
        print(f"iee: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except IEEError as exc:
        print(f"iee: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"iee: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
