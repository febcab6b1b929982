"""Command-line entry point: ``shiftinvert run ...`` and ``shiftinvert verify ...``."""

import argparse
import json
import sys

from .errors import ParseError
from .harness import RunConfig, all_completed, canonical_bytes, configure_logging, run, verify, write_report
from .solvers import SOLVER_NAMES


def build_parser():
    p = argparse.ArgumentParser(prog="shiftinvert", description="Top eigenvector by shifted-and-inverted power iteration.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run seeded trials and write a JSON report")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="Matrix Market (.mtx) or dense CSV matrix; with --stream, a sample file")
    src.add_argument("--synthetic", help="spike:d=..,strength=.. | diag:v1,v2,.. | random:n=..,d=..,density=..,gap=..")
    r.add_argument("--mode", choices=["offline", "online", "gap-free", "estimate-shift"], default="offline")
    r.add_argument("--epsilon", type=float, default=1e-6)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--solver", choices=SOLVER_NAMES, default="svrg")
    r.add_argument("--shift-solver", choices=SOLVER_NAMES, default=None)
    r.add_argument("--alpha", type=float, default=150.0)
    r.add_argument("--gap-floor", type=float, default=1e-4)
    r.add_argument("--sample-cap", type=int, default=None)
    r.add_argument("--var-hint", type=float, default=None)
    r.add_argument("--stream", action="store_true", help="treat --input as a one-pass sample stream")
    r.add_argument("--multi-epoch", action="store_true", help="allow rewinding a sample file (results are not streaming)")
    r.add_argument("--baseline-iters", type=int, default=None, help="also run plain power iteration for this many rounds")
    r.add_argument("--out", help="report path (default: standard output)")
    r.add_argument("--trace", help="newline-delimited JSON trace path")

    v = sub.add_parser("verify", help="re-run a report's configuration and compare")
    v.add_argument("--report", required=True)
    v.add_argument("--trace", default=None)
    return p


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            same = verify(args.report, args.trace)
            print("identical" if same else "MISMATCH")
            return 0 if same else 1
        cfg = RunConfig(
            mode=args.mode,
            input=args.input,
            synthetic=args.synthetic,
            epsilon=args.epsilon,
            seed=args.seed,
            trials=args.trials,
            solver=args.solver,
            shift_solver=args.shift_solver,
            alpha=args.alpha,
            gap_floor=args.gap_floor,
            sample_cap=args.sample_cap,
            var_hint=args.var_hint,
            stream=args.stream,
            multi_epoch=args.multi_epoch,
            baseline_iters=args.baseline_iters,
        )
        report = run(cfg, trace_path=args.trace)
    except (ParseError, ValueError, OSError) as err:
        print(f"shiftinvert: error: {err}", file=sys.stderr)
        return 2
    if args.out:
        write_report(report, args.out)
    else:
        sys.stdout.write(canonical_bytes(report, include_timing=True).decode() + "\n")
    agg = report["aggregate"]
    summary = {k: agg[k] for k in ("trials", "completed", "success_rate") if k in agg}
    print(json.dumps(summary), file=sys.stderr)
    return 0 if all_completed(report) else 1


if __name__ == "__main__":
    sys.exit(main())
