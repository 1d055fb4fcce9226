"""
Runtime settings resolved from the environment.

A ``.env`` file in the working directory is honoured through python-dotenv.
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

from src.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

THREADS_ENV = "BILEVEL_THREADS"

load_dotenv()


def worker_count(requested: Optional[int] = None) -> int:
    """
    Number of joblib workers to use for per-sample solves.

    Args:
        requested: Explicit worker count; capped by ``BILEVEL_THREADS`` when set

    Returns:
        Positive worker count (1 when nothing is configured)
    """
    raw = os.getenv(THREADS_ENV)
    cap = None
    if raw is not None and raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        if cap < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")

    if requested is None:
        return cap if cap is not None else 1
    if requested < 1:
        raise ConfigurationError(f"n_jobs must be positive, got {requested}")
    return min(requested, cap) if cap is not None else requested
