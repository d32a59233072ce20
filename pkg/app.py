import sys
import argparse
import logging
from typing import Sequence

from src.commands import COMMANDS
from src.utils.constants import EXIT_PARSE, EXIT_SOLVER
from src.utils.errors import (
    DescriptionError, ValidationError, ExpressionSyntaxError, UsageError, RecoveryError, LpvJumpError,
)

logger = logging.getLogger("lpvjump")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpvjump",
        description="L2-gain analysis and controller synthesis for LPV time-delay systems "
                    "with randomly jumping parameters",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.add_parser(subparsers)
    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(levelname)s] %(name)s: %(message)s", force=True)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse завершает работу сам; код 2 совпадает с кодом ошибки разбора
        return int(exc.code or 0)
    setup_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except ValidationError as exc:
        for field, msg in exc.issues:
            logger.error("%s: %s", field, msg)
        return EXIT_PARSE
    except (DescriptionError, ExpressionSyntaxError, UsageError) as exc:
        logger.error("%s", exc)
        return EXIT_PARSE
    except OSError as exc:
        logger.error("cannot access %s: %s", exc.filename, exc.strerror)
        return EXIT_PARSE
    except RecoveryError as exc:
        logger.error("controller recovery failed: %s", exc)
        return EXIT_SOLVER
    except LpvJumpError as exc:
        logger.error("%s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
