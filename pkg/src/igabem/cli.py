"""Command line entry point: ``igabem run --experiment NAME --mode MODE --out DIR``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .experiments import EXPERIMENTS, builtin_config, export, fit_rate, load_config, run_experiment
from .quadrature import QuadratureError
from .splines import GeometryError, SplineDomainError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="igabem", description="Adaptive isogeometric BEM for Symm's equation in 2D."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write CSV files")
    run.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    run.add_argument("--config", help="key = value file overriding the built-in setup")
    run.add_argument("--mode", choices=("uniform", "adaptive"), required=True)
    run.add_argument("--theta", type=float, default=None, help="bulk parameter (default 0.75)")
    run.add_argument("--max-knots", type=int, default=None)
    run.add_argument("--quad-order", type=int, default=None)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--quiet", action="store_true", help="do not print per-level lines")
    return parser


def _config(args):
    cfg = builtin_config(args.experiment)
    if args.config:
        cfg = load_config(args.config, base=cfg)
    updates = {"mode": args.mode}
    if args.theta is not None:
        updates["theta"] = args.theta
    if args.max_knots is not None:
        updates["max_knots"] = args.max_knots
    if args.quad_order is not None:
        updates["quad_order"] = args.quad_order
    return replace(cfg, **updates)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (OSError, ValueError, SyntaxError) as exc:
        print(f"igabem: invalid configuration: {exc}", file=sys.stderr)
        return 2
    log = None if args.quiet else print
    try:
        result = run_experiment(cfg, log=log)
    except (np.linalg.LinAlgError, FloatingPointError, QuadratureError,
            GeometryError, SplineDomainError) as exc:
        print(f"igabem: solver error: {exc}", file=sys.stderr)
        return 1
    paths = export(result, args.out)
    if not args.quiet:
        print(f"stopped: {result.stop_reason}")
        try:
            print(f"slope of the last levels: {fit_rate(result.table):.3f}")
        except ValueError:
            pass
        for path in paths:
            print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
