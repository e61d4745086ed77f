import logging
import sys
from typing import Union

from chameleon.core.config import LOG_LEVEL

PACKAGE_LOGGER = "chameleon"


def _package_logger() -> logging.Logger:
    root = logging.getLogger(PACKAGE_LOGGER)
    if not root.handlers:
        root.setLevel(getattr(logging, LOG_LEVEL, logging.INFO))
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        root.addHandler(handler)
    return root


def setup_logger(name=__name__):
    """Module logger under the package logger; the single stdout handler lives on the parent."""
    _package_logger()
    if name != PACKAGE_LOGGER and not name.startswith(PACKAGE_LOGGER + "."):
        name = f"{PACKAGE_LOGGER}.{name}"
    return logging.getLogger(name)


def set_log_level(level: Union[str, int]) -> None:
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    _package_logger().setLevel(level)
