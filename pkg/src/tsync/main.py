"""
Command-line interface for tsync-tools.

This module provides the main CLI entry point for the tsync-tools package using Click.
"""

from . import experiment
from .base import cli

# Register commands on the top-level group
experiment.create_experiment_commands(cli)


def main() -> None:
    """Main CLI entry point."""
    cli()


if __name__ == "__main__":
    main()
