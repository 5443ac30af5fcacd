"""Command-line entry points: single runs and convergence studies."""

import argparse
import sys

from .harness import (StudySpec, parse_fraction, records_to_csv,
                      records_to_table, run_case, run_study)
from .mms import make_case


def _add_common(p):
    p.add_argument("--T", type=parse_fraction, default=0.25)
    p.add_argument("--mu", type=parse_fraction, default=0.001)
    p.add_argument("--cutoff", choices=["strict", "widened", "off"],
                   default="widened")
    p.add_argument("--solver", choices=["auto", "direct", "gmres"],
                   default="auto", help="density-system solver")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="vardens",
        description="Variable-density incompressible flow solver and "
                    "convergence harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="time-march one manufactured case")
    runp.add_argument("--case", required=True,
                      choices=["square2d", "cube3d", "cube3d_nonsmooth"])
    runp.add_argument("--h", type=parse_fraction, required=True,
                      help="mesh size as 1/n (or the integer n)")
    runp.add_argument("--tau", type=parse_fraction, required=True)
    runp.add_argument("--diag", default=None,
                      help="write per-step diagnostics CSV here")
    _add_common(runp)

    studyp = sub.add_parser("study", help="run a convergence study")
    studyp.add_argument("--case", required=True,
                        choices=["square2d", "cube3d", "cube3d_nonsmooth"])
    studyp.add_argument("--mode", required=True, choices=["space", "time"])
    studyp.add_argument("--params", required=True,
                        help="comma-separated h (space) or tau (time) values,"
                             " e.g. 1/8,1/10,1/12")
    studyp.add_argument("--tau", type=parse_fraction, default=1.0 / 2048,
                        help="fixed time step for space mode")
    studyp.add_argument("--out", default=None, help="CSV output path")
    studyp.add_argument("--format", choices=["csv", "md"], default="csv")
    _add_common(studyp)

    args = parser.parse_args(argv)

    if args.command == "run":
        h = args.h if args.h < 1 else 1.0 / args.h
        case = make_case(args.case)
        diag = open(args.diag, "w") if args.diag else None
        try:
            result = run_case(
                case, h, args.tau, T=args.T, mu=args.mu,
                cutoff_mode=args.cutoff, density_solver=args.solver,
                diag_stream=diag,
            )
        finally:
            if diag:
                diag.close()
        print(f"case={args.case} h={h:.6g} tau={args.tau:.6g} "
              f"T={args.T} mu={args.mu}")
        print(f"E_rho={result['E_rho']:.6e} E_u={result['E_u']:.6e} "
              f"seconds={result['seconds']:.2f}")
        return 0

    params = [parse_fraction(tok) for tok in args.params.split(",") if tok]
    spec = StudySpec(
        case=args.case, mode=args.mode, params=params, tau=args.tau,
        T=args.T, mu=args.mu, cutoff_mode=args.cutoff,
        density_solver=args.solver, out_format=args.format,
    )
    records = run_study(
        spec,
        progress=lambda r: print(
            f"  h={r.h:.6g} tau={r.tau:.6g} "
            + (f"FAILED: {r.message}" if r.failed
               else f"E_rho={r.E_rho:.3e} E_u={r.E_u:.3e} "
                    f"({r.seconds:.1f}s)"),
            file=sys.stderr,
        ),
    )
    csv = records_to_csv(records)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    print(records_to_table(records, markdown=args.format == "md"))
    return 2 if any(r.failed for r in records) else 0


if __name__ == "__main__":
    sys.exit(main())
