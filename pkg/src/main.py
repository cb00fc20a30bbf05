"""
Main entry point for the Dirichlet fusion filter command line.
"""

import logging
import sys
from typing import Optional, Sequence

from .cli import FusionCLI
from .errors import ConfigError, FusionError

logger = logging.getLogger(__name__)


def setup_logging(level: str = 'INFO', quiet: bool = False):
    """Configure the root logger; standard output is reserved for data."""
    logging.basicConfig(
        level=logging.WARNING if quiet else getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        handlers=[
            logging.StreamHandler(sys.stderr),
        ]
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command and return its exit code.

    0 success, 1 data error, 2 usage or configuration error.
    """
    cli = FusionCLI()
    try:
        args = cli.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    setup_logging(args.log_level, args.quiet)
    try:
        return cli.dispatch(args)
    except ConfigError as e:
        logger.error(f"Usage error: {e}")
        return 2
    except (FusionError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
