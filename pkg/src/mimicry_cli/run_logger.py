"""Run Logger Configuration.

Configures Structlog to write one JSON object per line to the run log.
All entries carry an ISO UTC timestamp and a log level.
"""

import logging
import os
from pathlib import Path
from typing import TextIO

import structlog
from structlog.processors import (
    JSONRenderer,
    TimeStamper,
    add_log_level,
    format_exc_info,
)

from mimicry_cli.log_sanitizer import get_sanitizer

DEFAULT_LOG_FILE = "mimicry-run.log"

# Handle of the file the current configuration writes to
_log_fp: TextIO | None = None


def configure_run_logging(
    log_file: str | Path = DEFAULT_LOG_FILE,
    log_level: str = "INFO",
) -> None:
    """Configure run logging.

    Creates the log file with 0o600 permissions on POSIX systems and appends
    JSON lines to it.

    Args:
        log_file: Path to run log file (default: mimicry-run.log)
        log_level: Minimum level written (DEBUG, INFO, WARNING, ERROR)
    """
    global _log_fp

    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {log_level}")

    log_path = Path(log_file)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    if not log_path.exists():
        log_path.touch(mode=0o600)
    elif os.name != "nt":
        log_path.chmod(0o600)

    if _log_fp is not None:
        _log_fp.close()
    _log_fp = log_path.open("a", encoding="utf-8")

    structlog.configure(
        processors=[
            add_log_level,
            TimeStamper(fmt="iso", utc=True),
            get_sanitizer(),
            structlog.processors.StackInfoRenderer(),
            format_exc_info,
            JSONRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=_log_fp),
        cache_logger_on_first_use=False,
    )


def get_logger(name: str = "mimicry_cli") -> structlog.stdlib.BoundLogger:
    """Get a configured logger instance.

    Args:
        name: Logger name

    Returns:
        Configured Structlog bound logger
    """
    return structlog.get_logger(name)
