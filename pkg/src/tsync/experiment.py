"""
Experiment commands for tsync-tools.

This module provides Click commands that run scenarios, sweeps and
scheme comparisons and write their results to disk.
"""

from __future__ import annotations

import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from .config import (
    ConfigLoader,
    ScenarioConfig,
    build_scenario,
    create_sample_config,
    load_scenario_config,
)
from .protocol import SchemeMode
from .results import (
    summarize_run,
    write_histograms,
    write_json,
    write_manifest,
    write_messages,
    write_samples,
    write_summary,
)
from .simnet import run as run_simulation
from .util import make_run_id

console = Console()
logger = logging.getLogger(__name__)

MICRO = 1e6


def execute_point(scenario: ScenarioConfig, out_dir: Path, message_log: bool = False) -> dict[str, Any]:
    """Run one scenario and write its result files into ``out_dir``.

    Returns:
        The manifest entry describing the run.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_simulation(scenario)
    run_id = make_run_id(scenario.rng_seed)

    ConfigLoader().save_config(scenario, out_dir / "scenario.yaml")
    write_samples(result.samples, out_dir / "samples.csv", run_id, scenario.scheme.value, scenario.si_seconds)
    summary = summarize_run(result)
    write_summary(summary, out_dir / "summary.json")
    write_histograms(result.samples, out_dir / "histogram.csv", scenario.duration_seconds, scenario.trim_fraction)
    if message_log:
        write_messages(result.messages, out_dir / "messages.csv")

    return {
        "run_id": run_id,
        "dir": str(out_dir),
        "scheme": scenario.scheme.value,
        "si_seconds": scenario.si_seconds,
        "depth": scenario.depth,
        "rng_seed": scenario.rng_seed,
        "samples": len(result.samples),
        "undelivered": result.undelivered,
        "beacons": result.count("beacon"),
        "reports": result.count("report"),
        "summary": summary,
    }


def _execute_payload(payload: tuple[dict[str, Any], str, bool]) -> dict[str, Any]:
    data, out_dir, message_log = payload
    return execute_point(build_scenario(data), Path(out_dir), message_log)


def execute_points(
    points: list[ScenarioConfig], out: Path, parallel: int = 1, message_log: bool = False
) -> list[dict[str, Any]]:
    """Run every point into ``out/point-NNNN`` and write ``out/manifest.json``.

    Entries come back in point order whatever order the workers finish in.
    """
    payloads = [
        (p.model_dump(mode="json"), str(out / f"point-{i:04d}"), message_log)
        for i, p in enumerate(points)
    ]
    if parallel > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            entries = list(pool.map(_execute_payload, payloads))
    else:
        entries = []
        for i, payload in enumerate(payloads):
            console.print(f"[blue]Point {i + 1}/{len(payloads)}[/blue] {payload[1]}")
            entries.append(_execute_payload(payload))
    write_manifest(entries, out / "manifest.json")
    return entries


def _summary_table(title: str, summary: dict[str, dict[str, Any]]) -> Table:
    table = Table(title=title)
    table.add_column("scheme/SI/hop")
    table.add_column("MAE (µs)", justify="right")
    table.add_column("MSE (µs²)", justify="right")
    table.add_column("count", justify="right")
    table.add_column("slope (s/s)", justify="right")
    for key, row in summary.items():
        slope = row["slope_s_per_s"]
        table.add_row(
            key,
            f"{row['mae_s'] * MICRO:.3f}",
            f"{row['mse_s2'] * MICRO**2:.3f}",
            str(row["count"]),
            "-" if slope is None else f"{slope:.3e}",
        )
    return table


def _fail(action: str, e: Exception) -> None:
    console.print(f"[red]Error {action}: {escape(str(e))}[/red]")
    console.print(f"[yellow]Error type: {type(e).__name__}[/yellow]")
    sys.exit(1)


@click.command()
@click.option("--config", "-c", type=str, help="Path to scenario file")
@click.option("--out", "-o", type=click.Path(file_okay=False), default="results", show_default=True, help="Output directory")
@click.option("--seed", "-s", type=click.IntRange(0, 2**64 - 1), help="Override the scenario's rng_seed")
@click.option("--message-log", "-m", is_flag=True, help="Also write messages.csv")
def run(config: str | None, out: str, seed: int | None, message_log: bool) -> None:
    """Run one scenario and write samples.csv, summary.json and histogram.csv."""
    try:
        scenario = load_scenario_config(config)
        if seed is not None:
            scenario = scenario.with_updates(rng_seed=seed)
        entry = execute_point(scenario, Path(out), message_log)
        console.print(_summary_table(entry["run_id"], entry["summary"]))
        if entry["undelivered"]:
            console.print(f"[yellow]{entry['undelivered']} measurements were never estimated[/yellow]")
        console.print(f"[green]Results written to {out}[/green]")
    except Exception as e:
        _fail("running scenario", e)


@click.command()
@click.option("--config", "-c", type=str, help="Path to sweep or scenario file")
@click.option("--out", "-o", type=click.Path(file_okay=False), default="sweep", show_default=True, help="Output directory")
@click.option("--parallel", "-p", type=click.IntRange(min=1), default=1, show_default=True, help="Worker processes")
@click.option("--message-log", "-m", is_flag=True, help="Also write messages.csv per point")
def sweep(config: str | None, out: str, parallel: int, message_log: bool) -> None:
    """Run every point of a sweep and write a manifest."""
    try:
        points = ConfigLoader(config).load_sweep().points()
        console.print(f"[blue]Sweeping {len(points)} points with {parallel} worker(s)...[/blue]")
        entries = execute_points(points, Path(out), parallel, message_log)
        for entry in entries:
            console.print(_summary_table(entry["run_id"], entry["summary"]))
        console.print(f"[green]Manifest written to {Path(out) / 'manifest.json'}[/green]")
    except Exception as e:
        _fail("running sweep", e)


def compare_rows(entries: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Seed-averaged statistics per (scheme, SI, hop), plus AHTS wins per (SI, hop)."""
    groups: dict[tuple[str, float, int], list[dict[str, Any]]] = defaultdict(list)
    for entry in entries:
        for key, row in entry["summary"].items():
            hop = int(key.rsplit("/", 1)[1])
            groups[(entry["scheme"], entry["si_seconds"], hop)].append({**row, "rng_seed": entry["rng_seed"]})

    rows = []
    for (scheme, si, hop), runs in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0])):
        row: dict[str, Any] = {
            "scheme": scheme,
            "si_s": si,
            "hop": hop,
            "seeds": len(runs),
            "mae_s": sum(r["mae_s"] for r in runs) / len(runs),
            "mse_s2": sum(r["mse_s2"] for r in runs) / len(runs),
            "count": sum(r["count"] for r in runs),
        }
        if scheme == SchemeMode.AHTS.value:
            rival = {r["rng_seed"]: r["mae_s"] for r in groups.get((SchemeMode.EE_ASCFR.value, si, hop), [])}
            row["wins"] = sum(1 for r in runs if r["rng_seed"] in rival and r["mae_s"] < rival[r["rng_seed"]])
        rows.append(row)
    return rows


@click.command()
@click.option("--config", "-c", type=str, help="Path to base scenario file")
@click.option("--out", "-o", type=click.Path(file_okay=False), default="compare", show_default=True, help="Output directory")
@click.option("--si", "si_values", type=click.FloatRange(min=0, min_open=True), multiple=True, help="SI in seconds (repeatable)")
@click.option("--seeds", "-n", type=click.IntRange(min=1), default=1, show_default=True, help="Seeds per (scheme, SI)")
@click.option("--parallel", "-p", type=click.IntRange(min=1), default=1, show_default=True, help="Worker processes")
def compare(config: str | None, out: str, si_values: tuple[float, ...], seeds: int, parallel: int) -> None:
    """Run EE-ASCFR and AHTS on identical seeds and tabulate their errors."""
    try:
        base = load_scenario_config(config)
        sis = si_values or (1.0, 10.0, 100.0)
        points = [
            base.with_updates(scheme=scheme, si_seconds=si, rng_seed=base.rng_seed + i)
            for si in sis
            for scheme in (SchemeMode.EE_ASCFR, SchemeMode.AHTS)
            for i in range(seeds)
        ]
        entries = execute_points(points, Path(out), parallel)
        rows = compare_rows(entries)
        write_json({"rows": rows}, Path(out) / "compare.json")

        table = Table(title="Measurement time estimation error")
        for column in ("scheme", "SI (s)", "hop", "MAE (µs)", "MSE (µs²)", "AHTS better"):
            table.add_column(column, justify="right")
        for row in rows:
            wins = f"{row['wins']}/{row['seeds']}" if "wins" in row else ""
            table.add_row(
                row["scheme"],
                f"{row['si_s']:g}",
                str(row["hop"]),
                f"{row['mae_s'] * MICRO:.3f}",
                f"{row['mse_s2'] * MICRO**2:.3f}",
                wins,
            )
        console.print(table)
    except Exception as e:
        _fail("comparing schemes", e)


@click.command(name="validate-config")
@click.option("--config", "-c", type=str, required=True, help="Path to scenario or sweep file")
def validate_config(config: str) -> None:
    """Check a scenario or sweep file without running it."""
    try:
        points = ConfigLoader(config).load_sweep().points()
        first = points[0]
        console.print(f"[green]{config} is valid[/green]")
        console.print(f"Points:   [bold][blue]{len(points)}[/blue]")
        console.print(f"Scheme:   [bold][blue]{first.scheme.value}[/blue]")
        console.print(f"Rounds:   [bold][blue]{first.rounds}[/blue]")
        console.print(f"Depth:    [bold][blue]{first.depth}[/blue]")
    except Exception as e:
        _fail("validating configuration", e)


@click.command()
@click.argument("path", type=click.Path(dir_okay=False), default="tsync.yaml")
def init(path: str) -> None:
    """Write a sample scenario file."""
    try:
        if Path(path).exists():
            console.print(f"[yellow]{path} already exists[/yellow]")
            sys.exit(1)
        create_sample_config(path)
        console.print(f"[green]Sample scenario written to {path}[/green]")
    except Exception as e:
        _fail("writing sample configuration", e)


def create_experiment_commands(cli_group: click.Group) -> click.Group:
    """Register the experiment commands on the top-level group."""
    cli_group.add_command(run, "run", aliases=["r"])  # type: ignore
    cli_group.add_command(sweep, "sweep", aliases=["s"])  # type: ignore
    cli_group.add_command(compare, "compare", aliases=["c"])  # type: ignore
    cli_group.add_command(validate_config, "validate-config", aliases=["v"])  # type: ignore
    cli_group.add_command(init, "init", aliases=["i"])  # type: ignore
    return cli_group

