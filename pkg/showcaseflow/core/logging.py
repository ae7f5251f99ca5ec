"""
Logging setup shared by every command.

Commands log progress and summary metrics through module loggers; the
training loops log a loss breakdown every `training.log_every` steps.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Loggers that follow the requested level
PACKAGE_LOGGERS = ("showcaseflow.services", "showcaseflow.cli", "showcaseflow.storage")

# Third-party loggers held at WARNING
QUIET_LOGGERS = ("torch", "nltk", "matplotlib")


def resolve_level(log_level: str) -> int:
    """Numeric level for a level name; unknown names fall back to INFO."""
    level = getattr(logging, str(log_level).upper(), None)
    return level if isinstance(level, int) else logging.INFO


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None) -> int:
    """
    Configure process-wide logging.

    Safe to call once per command: existing root handlers are replaced, so
    running several commands in one process does not duplicate output.

    Args:
        log_level: Minimum log level to display (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional path to a rotating log file (10 MB, 5 backups)

    Returns:
        The numeric level in effect
    """
    level = resolve_level(log_level)
    formatter = logging.Formatter(LOG_FORMAT)

    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)
        handler.close()
    root_logger.setLevel(level)

    handlers: list = [logging.StreamHandler(sys.stdout)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5))
    for handler in handlers:
        handler.setFormatter(formatter)
        root_logger.addHandler(handler)

    for name in PACKAGE_LOGGERS:
        logging.getLogger(name).setLevel(level)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.debug(f"Logging configured with level {logging.getLevelName(level)}")
    return level
