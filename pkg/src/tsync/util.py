"""
Utility functions for tsync-tools.

This module provides common utility functions used across the package.
"""

import logging
import random

import coolname  # type: ignore
from rich.logging import RichHandler


def setup_logging(verbose: bool = False) -> None:
    """Route library logging through rich; DEBUG adds the per-message log."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=verbose)],
        force=True,
    )


def make_run_id(seed: int) -> str:
    """A memorable, reproducible run name such as ``quiet-amber-falcon-7``."""
    coolname.replace_random(random.Random(seed))
    return f"{coolname.generate_slug(3)}-{seed}"
