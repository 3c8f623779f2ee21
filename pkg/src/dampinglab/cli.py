"""Command line entry point: one subcommand per experiment plus ``report``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .runner import EXPERIMENTS, ConfigError, collect_report, run_experiment


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of experiment settings (nested or dotted keys)")
    common.add_argument("--out", default="runs", help="output root; results go to <out>/<experiment>")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized experiments")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent cells")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="dampinglab", description="Decay-rate experiments for damped compressible flow.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    sub.add_parser("report", parents=[common], help="merge per-experiment reports under --out")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed < 0:
        parser.error("--seed must be nonnegative")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    if args.command == "report":
        try:
            ok = collect_report(args.out)
        except FileNotFoundError as exc:
            print(f"dampinglab: {exc}", file=sys.stderr)
            return 2
        print(os.path.join(args.out, "report.md"))
        return 0 if ok else 1
    if not args.config:
        parser.error("--config is required")
    try:
        result = run_experiment(args.config, args.out, args.command, args.seed, args.threads)
    except (ConfigError, FileNotFoundError) as exc:
        parser.error(str(exc))
    for r in result.rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.quantity}: measured {r.measured:.6g} (predicted {r.predicted:.6g})")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
