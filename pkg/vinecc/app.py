"""
vinecc application entry point.

Parses the command line, configures logging and dispatches to the
subcommand. Library errors become process exit codes here.
"""

import logging
import sys
from pathlib import Path
from typing import List, Optional

from vinecc.config import RunConfig, load_settings
from vinecc.constants import APP_NAME, APP_VERSION, EXIT_OK
from vinecc.errors import VineccError


def setup_logging(level: int = logging.INFO, log_file: Optional[Path] = None) -> None:
    """
    Configure application logging.

    Logs go to stderr and, optionally, to a UTF-8 log file. Stdout is
    reserved for command output.
    """
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=level,
        format="[%(asctime)s.%(msecs)03d] [%(levelname)s] [%(name)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=handlers,
        force=True,
    )


def run_application(argv: List[str]) -> int:
    """
    Run one command.

    Args:
        argv: Full argument vector (argv[0] is the program name)

    Returns:
        Process exit code
    """
    from vinecc.cli import build_parser

    parser = build_parser()
    args = parser.parse_args(argv[1:])

    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = logging.INFO
    setup_logging(level, args.log_file)

    logger = logging.getLogger(__name__)
    logger.debug(f"{APP_NAME} {APP_VERSION} running {args.command}")

    try:
        config = RunConfig.from_settings(load_settings(args.config))
        config = config.with_overrides(
            jobs=args.jobs,
            seed=args.seed,
            **{key: getattr(args, key, None) for key in args.overrides},
        )
        logger.debug(f"Run config: {config.to_dict()}")
        return args.handler(args, config)
    except VineccError as e:
        logger.error(str(e))
        if args.verbose:
            logger.exception("Traceback")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 2
    finally:
        logging.shutdown()


def main() -> None:
    """Console script entry point."""
    sys.exit(run_application(sys.argv) or EXIT_OK)
