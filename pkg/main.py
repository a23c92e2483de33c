"""
main.py
Command-line entry point.

    python main.py infer-basin --config configs/swing-D0.39.yaml --workers 8
    python main.py search --config configs/chua.yaml --seed 7 --out runs/chua-7
    python main.py verify
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

import verify
from errors import BalancedRCError, ConfigError
from experiment_config import load_config
from main_logic import STAGES, run_stage

logger = logging.getLogger("balanced_rc")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="balanced-rc",
        description="Balanced reservoir computing: datasets, hyperparameter search, basin inference.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--workers", type=int, default=None, help="parallel workers (-1: all cores)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--machine", default=None, help="machine file to reuse (infer-basin, sweep-guide)")
        p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")

    v = sub.add_parser("verify", help="run the numerical checks")
    v.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def run_verify() -> int:
    results = verify.run_all()
    print(verify.results_frame(results).to_string(index=False))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    if args.command == "verify":
        return run_verify()

    try:
        cfg = load_config(args.config, seed=args.seed, workers=args.workers, out=args.out)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG

    try:
        result = run_stage(args.command, cfg, args.machine)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except BalancedRCError as exc:
        logger.error("Stage %s failed: %s", args.command, exc)
        return EXIT_FAILED

    for key, value in result.summary.items():
        print(f"{key}: {value}")
    for path in result.artifacts:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
