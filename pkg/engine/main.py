"""
Rule-based probabilistic inference engine
Validates, converts and compresses rule bases, and answers posterior queries
exactly (variable elimination over tables or rules) or as intervals
"""

import argparse
import logging
import sys
from typing import List, Optional

from commands import inference_commands, model_commands
from commands.options import common_parser
from config.settings import LOG_LEVEL
from services.errors import InferenceError

logger = logging.getLogger(__name__)

EPILOG = """
╔════════════════════════════════════════════════════════╗
║          Rule-based Inference Engine                   ║
╚════════════════════════════════════════════════════════╝

  📂 Models:
  - validate   (rule-base invariants, exit 1 on a violation)
  - convert    (cpt <-> rule documents)
  - compress   (rule counts at threshold 0 and th)

  🔍 Inference:
  - infer      (--engine ve | rules | enum)
  - bounds     (posterior intervals after simplification)
  - compare    (randomized agreement and containment sweep)

  Exit codes: 0 ok, 1 invalid model or failed check,
              2 bad input, 3 impossible evidence
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description=__doc__.strip().splitlines()[0],
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = common_parser()
    model_commands.register(subparsers, common)
    inference_commands.register(subparsers, common)
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    """-v: INFO, -vv: DEBUG, -q: ERROR (기본값은 LOG_LEVEL)"""
    level = getattr(logging, LOG_LEVEL.upper(), logging.WARNING)
    if args.verbose >= 2:
        level = logging.DEBUG
    elif args.verbose == 1:
        level = logging.INFO
    if args.quiet:
        level = logging.ERROR
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        return args.handler(args)
    except InferenceError as e:
        logger.error(f"❌ {args.command} failed: {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
