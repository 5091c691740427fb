"""
Logging configuration shared by the CLI and the tests.
"""

import logging
import os
from typing import Optional

from utils.errors import ConfigurationError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVEL_ENV = "TRAFFIC_CONF_LOG_LEVEL"


def resolve_log_level(level: Optional[str] = None) -> int:
    """
    Resolve the effective log level.

    Args:
        level: Explicit level name (e.g. "DEBUG"). Falls back to the
            TRAFFIC_CONF_LOG_LEVEL environment variable, then INFO.

    Returns:
        Numeric logging level.
    """
    name = level or os.getenv(LOG_LEVEL_ENV) or "INFO"
    numeric = logging.getLevelName(name.upper())
    if not isinstance(numeric, int):
        raise ConfigurationError(f"Unknown log level: {name}")
    return numeric


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single root handler with the project log format."""
    logging.basicConfig(level=resolve_log_level(level), format=LOG_FORMAT, force=True)


def progress_disabled(logger: logging.Logger) -> bool:
    """Progress bars are shown only when the logger would print INFO records."""
    return not logger.isEnabledFor(logging.INFO)
