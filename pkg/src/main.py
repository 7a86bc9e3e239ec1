import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.handlers import analytic, markov, palm, simulate, validate
from src.utils.errors import EXIT_RUNTIME, HandoverLabError
from src.utils.validators import RunArgsValidator

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


def _scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Scenario JSON file")
    parser.add_argument("--seed", type=int, help="Override the scenario seed")
    parser.add_argument("--window", type=float, nargs=2, metavar=("T_START", "T_END"), help="Override the window")
    parser.add_argument("--epsilon", type=float, help="Override the truncation budget")


def _run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="Output directory (default: $HANDOVER_LAB_OUTPUT_DIR or results)")
    parser.add_argument("--threads", type=int, help="Worker threads (default: $HANDOVER_LAB_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handover-lab",
        description="Exact simulation and Palm analytics of handovers between moving Poisson stations",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Simulate replicas and write the handover events")
    _scenario_flags(p)
    _run_flags(p)
    p.add_argument("--replicas", type=int, default=1)
    p.set_defaults(func=simulate.run)

    p = sub.add_parser("palm", help="Palm estimates, goodness-of-fit tests and histogram data")
    _scenario_flags(p)
    _run_flags(p)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--typical", type=int, default=200, help="Typical times sampled per replica")
    p.set_defaults(func=palm.run)

    p = sub.add_parser("analytic", help="Closed forms and quadratures")
    p.add_argument("query", choices=RunArgsValidator.QUERIES)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="Query parameter, repeatable")
    _scenario_flags(p)
    _run_flags(p)
    p.set_defaults(func=analytic.run)

    p = sub.add_parser("markov", help="Run the handover Markov chain")
    _scenario_flags(p)
    _run_flags(p)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--burn-in", dest="burn_in", type=float, help="Burn-in length in mean dwell times")
    p.set_defaults(func=markov.run)

    p = sub.add_parser("validate", help="Run the acceptance suite")
    p.add_argument("suite", nargs="?", default="quick", choices=RunArgsValidator.SUITES)
    _run_flags(p)
    p.set_defaults(func=validate.run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("HANDOVER_LAB_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HandoverLabError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {str(e)}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
