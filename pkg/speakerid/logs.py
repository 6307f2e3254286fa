"""Logging setup driven by the environment (.env is honoured)."""

import logging
import os

from dotenv import load_dotenv

LOG_LEVEL_VARIABLE = "SPEAKERID_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str | None = None) -> int:
    """Configure the root logger once and return the effective level.

    An explicit ``level`` wins over ``SPEAKERID_LOG_LEVEL``; unknown names
    fall back to WARNING.
    """
    load_dotenv()
    name = (level or os.getenv(LOG_LEVEL_VARIABLE) or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.WARNING

    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
    logging.getLogger("speakerid").setLevel(numeric)
    return numeric
