"""Command-line entry point: ``python3 -m evhighway --scenario FILE [...]``.

Exit codes: 0 success, 2 invalid scenario, 3 game did not converge,
4 scenario file unreadable or not JSON.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .best_response import NonConvergenceError
from .io import MODES, run
from .scenario import ScenarioError, ScenarioParseError, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_PARSE = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evhighway", description="Freeway CTM with a charging station and an EV charging game.")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: the scenario's)")
    p.add_argument("--steps", type=int, default=None, help="number of CTM steps (default: the scenario's)")
    p.add_argument("--mode", choices=MODES, default="closed-loop")
    p.add_argument("--out-dir", required=True, help="artifact directory")
    p.add_argument("--epsilon", type=float, default=None, help="improvement threshold of the game")
    p.add_argument("--schedule", choices=("round-robin", "request-queue", "random"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.steps is not None and args.steps < 0:
        print("error: --steps must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    if args.epsilon is not None and not args.epsilon > 0:
        print("error: --epsilon must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = run(scenario, args.out_dir, args.seed, args.steps, args.mode, args.epsilon, args.schedule)
    except NonConvergenceError as exc:
        print(f"error: {exc} (trace written to {args.out_dir})", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
