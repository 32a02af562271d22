"""
Result files: per-sample CSV, grouped summary JSON, error histograms,
message log and sweep manifest.

Floats are written with ``repr`` so that re-reading a file reproduces every
value bit for bit.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from .errors import MetricsError, ResultsIOError
from .metrics import ErrorSample, error_growth_slope, group_stats, histogram
from .simnet import MessageLogEntry, RunResult

SAMPLE_COLUMNS = (
    "run_id",
    "scheme",
    "si_s",
    "node_id",
    "hop",
    "event_ref_time_s",
    "t_est_s",
    "error_s",
)

MESSAGE_COLUMNS = (
    "kind",
    "round",
    "src",
    "dst",
    "send_time_s",
    "recv_time_s",
    "size_bytes",
    "dropped",
)

HISTOGRAM_COLUMNS = ("hop", "bin_center_s", "probability", "out_of_range")


def summary_key(scheme: str, si_seconds: float, hop: int) -> str:
    return f"{scheme}/{si_seconds!r}/{hop}"


def write_samples(
    samples: Iterable[ErrorSample],
    path: str | Path,
    run_id: str,
    scheme: str,
    si_seconds: float,
) -> None:
    """Write one CSV row per sample under the fixed column set."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SAMPLE_COLUMNS)
            for s in samples:
                writer.writerow(
                    (
                        run_id,
                        scheme,
                        repr(si_seconds),
                        s.node_id,
                        s.hop,
                        repr(s.event_ref_time),
                        repr(s.estimate),
                        repr(s.error),
                    )
                )
    except OSError as e:
        raise ResultsIOError(f"Failed to write samples to {path}: {e}") from e


def read_samples(path: str | Path) -> list[ErrorSample]:
    """Parse a samples CSV back into ``ErrorSample`` values."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != SAMPLE_COLUMNS:
                raise ResultsIOError(f"{path} does not have the sample columns {SAMPLE_COLUMNS}")
            return [
                ErrorSample(
                    node_id=int(row["node_id"]),
                    hop=int(row["hop"]),
                    event_ref_time=float(row["event_ref_time_s"]),
                    error=float(row["error_s"]),
                    estimate=float(row["t_est_s"]),
                )
                for row in reader
            ]
    except (OSError, KeyError, ValueError) as e:
        raise ResultsIOError(f"Failed to read samples from {path}: {e}") from e


def summarize(
    samples: Sequence[ErrorSample],
    scheme: str,
    si_seconds: float,
    duration: float,
    trim_fraction: float,
) -> dict[str, dict[str, Any]]:
    """Per-hop trimmed statistics keyed ``scheme/si/hop``.

    ``slope_s_per_s`` is ``None`` when the trimmed set is too small to fit.
    """
    summary: dict[str, dict[str, Any]] = {}
    cutoff = trim_fraction * duration
    for hop, stats in group_stats(samples, duration, trim_fraction).items():
        kept = [s for s in samples if s.hop == hop and s.event_ref_time >= cutoff]
        try:
            slope: float | None = error_growth_slope(kept)
        except MetricsError:
            slope = None
        summary[summary_key(scheme, si_seconds, hop)] = {
            "mae_s": stats.mae,
            "mse_s2": stats.mse,
            "count": stats.count,
            "trim_fraction": stats.trim_fraction,
            "slope_s_per_s": slope,
        }
    return summary


def summarize_run(result: RunResult) -> dict[str, dict[str, Any]]:
    cfg = result.config
    return summarize(
        result.samples, cfg.scheme.value, cfg.si_seconds, cfg.duration_seconds, cfg.trim_fraction
    )


def write_json(data: Any, path: Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise ResultsIOError(f"Failed to write {path}: {e}") from e


def write_summary(summary: dict[str, dict[str, Any]], path: str | Path) -> None:
    write_json(summary, Path(path))


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ResultsIOError(f"Failed to read {path}: {e}") from e


def write_histograms(
    samples: Sequence[ErrorSample],
    path: str | Path,
    duration: float,
    trim_fraction: float,
) -> None:
    """Write the per-hop error distribution of the samples kept after trimming.

    ``out_of_range`` repeats on every row of a hop: the share of its samples
    that fall outside the binned range.
    """
    path = Path(path)
    cutoff = trim_fraction * duration
    hops = sorted({s.hop for s in samples})
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(HISTOGRAM_COLUMNS)
            for hop in hops:
                dist = histogram([s for s in samples if s.hop == hop and s.event_ref_time >= cutoff])
                for center, probability in dist.bins:
                    writer.writerow((hop, repr(center), repr(probability), repr(dist.out_of_range)))
    except OSError as e:
        raise ResultsIOError(f"Failed to write histograms to {path}: {e}") from e


def write_messages(messages: Iterable[MessageLogEntry], path: str | Path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(MESSAGE_COLUMNS)
            for m in messages:
                writer.writerow(
                    (
                        m.kind,
                        m.round_k,
                        m.src,
                        m.dst,
                        repr(m.send_time),
                        "" if m.recv_time is None else repr(m.recv_time),
                        m.size_bytes,
                        int(m.dropped),
                    )
                )
    except OSError as e:
        raise ResultsIOError(f"Failed to write message log to {path}: {e}") from e


def write_manifest(entries: Sequence[dict[str, Any]], path: str | Path) -> None:
    """Write the sweep manifest: one entry per executed point, in sweep order."""
    write_json({"points": list(entries)}, Path(path))
