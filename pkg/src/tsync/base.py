"""
Base CLI configuration for tsync-tools.

This module provides the main CLI group using ClickAliasedGroup for alias support.
"""

import click
from click_aliases import ClickAliasedGroup
from rich.console import Console

from . import __version__
from .util import setup_logging

console = Console()


@click.group(cls=ClickAliasedGroup)
@click.version_option(version=__version__, prog_name="tsync-tools")
@click.option("-v", "--verbose", is_flag=True, help="Enable verbose output and the per-message log")
def cli(verbose: bool) -> None:
    """
    tsync-tools - Time synchronization simulator for multi-hop sensor chains.
    """
    setup_logging(verbose)
    if verbose:
        console.print("[bold blue]tsync-tools[/bold blue] - EE-ASCFR / AHTS simulator")
        console.print("Verbose mode: [green]enabled[/green]")
