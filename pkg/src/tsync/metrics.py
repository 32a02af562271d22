"""
Error aggregation: trimmed MAE/MSE, histograms and error growth slopes.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import MetricsError

DEFAULT_TRIM_FRACTION = 0.1
DEFAULT_BIN_WIDTH = 1e-6
DEFAULT_RANGE = (-10e-6, 10e-6)


@dataclass(frozen=True)
class ErrorSample:
    """Estimation error of one delivered measurement.

    ``error`` is estimate minus truth, in seconds.
    """

    node_id: int
    hop: int
    event_ref_time: float
    error: float
    estimate: float = 0.0


@dataclass(frozen=True)
class ErrorStats:
    mae: float
    mse: float
    count: int
    trim_fraction: float


@dataclass(frozen=True)
class Histogram:
    """Bin probabilities as fractions of all samples.

    ``bins`` holds ``(bin_center, probability)`` pairs; ``out_of_range`` is
    the fraction of samples outside the range.
    """

    bins: list[tuple[float, float]]
    out_of_range: float

    @property
    def in_range(self) -> float:
        return sum(p for _, p in self.bins)


def _errors(samples: Iterable[ErrorSample]) -> np.ndarray:
    return np.fromiter((s.error for s in samples), dtype=np.float64)


def trimmed_stats(
    samples: Sequence[ErrorSample],
    duration: float,
    trim_fraction: float = DEFAULT_TRIM_FRACTION,
) -> ErrorStats:
    """MAE and MSE over the samples at or after ``trim_fraction * duration``.

    Raises:
        MetricsError: If ``trim_fraction`` is outside [0, 1) or nothing
            survives the trim.
    """
    if not 0 <= trim_fraction < 1:
        raise MetricsError(f"trim_fraction must be in [0, 1), got {trim_fraction!r}")
    cutoff = trim_fraction * duration
    errors = _errors(s for s in samples if s.event_ref_time >= cutoff)
    if errors.size == 0:
        raise MetricsError(
            f"no samples at or after t={cutoff:g} s ({len(samples)} before trimming)"
        )
    return ErrorStats(
        mae=float(np.mean(np.abs(errors))),
        mse=float(np.mean(np.square(errors))),
        count=int(errors.size),
        trim_fraction=trim_fraction,
    )


def histogram(
    samples: Sequence[ErrorSample],
    bin_width: float = DEFAULT_BIN_WIDTH,
    value_range: tuple[float, float] = DEFAULT_RANGE,
) -> Histogram:
    """Empirical distribution of errors over ``value_range``.

    Raises:
        MetricsError: On a non-positive bin width or an empty range.
    """
    lo, hi = value_range
    if not bin_width > 0:
        raise MetricsError(f"bin_width must be positive, got {bin_width!r}")
    if not lo < hi:
        raise MetricsError(f"histogram range is empty: ({lo!r}, {hi!r})")

    n_bins = max(1, round((hi - lo) / bin_width))
    edges = np.linspace(lo, hi, n_bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    errors = _errors(samples)
    if errors.size == 0:
        return Histogram(bins=[(float(c), 0.0) for c in centers], out_of_range=0.0)

    counts, _ = np.histogram(errors, bins=edges)
    inside = int(counts.sum())
    probabilities = counts / errors.size
    return Histogram(
        bins=[(float(c), float(p)) for c, p in zip(centers, probabilities)],
        out_of_range=(errors.size - inside) / errors.size,
    )


def error_growth_slope(samples: Sequence[ErrorSample]) -> float:
    """Least-squares slope of error against reference time (s per s).

    Raises:
        MetricsError: With fewer than two samples or all at the same time.
    """
    if len(samples) < 2:
        raise MetricsError(f"slope needs at least 2 samples, got {len(samples)}")
    times = np.fromiter((s.event_ref_time for s in samples), dtype=np.float64)
    errors = _errors(samples)
    dt = times - times.mean()
    spread = float(np.dot(dt, dt))
    if spread == 0.0:
        raise MetricsError("all samples share one reference time; slope is undefined")
    return float(np.dot(dt, errors - errors.mean()) / spread)


def group_stats(
    samples: Sequence[ErrorSample],
    duration: float,
    trim_fraction: float = DEFAULT_TRIM_FRACTION,
) -> dict[int, ErrorStats]:
    """``trimmed_stats`` per hop, in hop order."""
    by_hop: dict[int, list[ErrorSample]] = defaultdict(list)
    for sample in samples:
        by_hop[sample.hop].append(sample)
    return {hop: trimmed_stats(by_hop[hop], duration, trim_fraction) for hop in sorted(by_hop)}
