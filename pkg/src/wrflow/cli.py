"""Command-line entry point: ``wrflow {simulate,enumerate,frame,alpha,check}``."""

import argparse
import json
import sys

from .errors import WRFlowError
from .scenario import COMMANDS, resolve_config, run_scenario


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wrflow",
        description="Weighted-residual operator flows: sampling, enumeration and frame extraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "sample branches and report level statistics and extinction",
        "enumerate": "exhaustive expectation profile, supermartingale and energy-balance checks",
        "frame": "extract atoms along one branch and export the frame",
        "alpha": "report the leakage constant and the splitting status",
        "check": "run every applicable check on the instance",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", default="runs", help="directory for run folders (default: runs)")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--threads", type=int, default=1, help="sampling threads; never changes results")
        p.add_argument("--mode", choices=("exhaustive", "monte_carlo"), help="override mode")
        p.add_argument("--depth", type=int, help="override depth")
        p.add_argument("--samples", type=int, help="Monte Carlo sample count (implies monte_carlo)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        cfg = resolve_config(raw, seed=args.seed, depth=args.depth, mode=args.mode,
                             samples=args.samples)
        run_dir, summary = run_scenario(args.command, cfg, args.out, threads=args.threads)
    except (OSError, json.JSONDecodeError, WRFlowError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for name, check in sorted(summary["checks"].items()):
        print(f"{'PASS' if check['pass'] else 'FAIL'}  {name}")
    print(run_dir)
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
