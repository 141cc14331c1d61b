"""Command-line entry point: ``igaest run <case>`` and ``igaest list``."""

import argparse
import logging
import sys

from .adaptivity import INDICATORS, SOLVERS
from .cases import list_cases
from .harness import build_config, load_config, run_case

_MARKINGS = ("uniform", "garu", "puca", "bulk")


def _parser():
    parser = argparse.ArgumentParser(
        prog="igaest", description="Functional a posteriori error estimates for IgA Poisson solvers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every step")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list the built-in cases")

    run = sub.add_parser("run", help="run a case and write report.csv, mesh dumps and summary.json")
    run.add_argument("case")
    run.add_argument("--config", help="flat key=value file; flags given here override it")
    run.add_argument("--out", help="output directory (default: out_<case>)")
    for name, kind, helptext in [
        ("p", int, "primal degree"),
        ("q", int, "flux degree"),
        ("r", int, "auxiliary (minorant) degree"),
        ("M", int, "flux mesh coarsening ratio, a power of two"),
        ("L", int, "auxiliary mesh coarsening ratio, a power of two"),
        ("steps", int, "refinement steps after warm-up"),
        ("warmup", int, "uniform warm-up refinements"),
        ("theta", float, "marking parameter"),
        ("maj-iters", int, "majorant beta iterations"),
        ("quad-order", int, "Gauss points per direction"),
        ("kink-depth", int, "grading depth towards a known kink"),
        ("max-depth", int, "maximum hierarchy depth"),
        ("k1", float, "ex2 frequency in x"),
        ("k2", float, "ex2 frequency in y"),
    ]:
        run.add_argument("--" + name, type=kind, help=helptext)
    run.add_argument("--marking", type=str.lower, choices=_MARKINGS)
    run.add_argument("--solver", choices=SOLVERS)
    run.add_argument("--indicator", choices=INDICATORS, help="indicator driving the marking")
    run.add_argument("--no-minorant", dest="minorant", action="store_false", default=None)
    run.add_argument("--no-residual", dest="residual", action="store_false", default=None)
    return parser


def _run(args):
    file_values = load_config(args.config) if args.config else {}
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "case", "config", "verbose")}
    config, case_opts, out_dir = build_config(file_values, overrides)
    out_dir = out_dir or "out_%s" % args.case
    outcome = run_case(args.case, config, out_dir, **case_opts)
    for row in outcome.result.rows:
        print("ref %2d  dofs %7d  err %.4e  maj %.4e  I_eff %.4f" % (
            row.ref, row.dof_u, row.err, row.maj, row.ieff_maj))
    print("%s: %s (%d rows) -> %s" % (args.case, outcome.summary["status"], len(outcome.result.rows), out_dir))
    if not outcome.ok:
        print(outcome.result.message, file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        for name, desc in list_cases():
            print("%-5s %s" % (name, desc))
        return 0
    try:
        return _run(args)
    except (KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print("error: %s" % msg, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
