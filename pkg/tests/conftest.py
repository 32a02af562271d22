"""
Shared fixtures for the tsync test suite.
"""

from collections.abc import Callable
from typing import Any

import numpy as np
import pytest

from tsync.config import ScenarioConfig, build_scenario
from tsync.precision import compute_precision_loss

SHORT_RUN: dict[str, Any] = {
    "si_seconds": 1.0,
    "duration_seconds": 20.0,
    "bundle_size": 5,
    "measurement_rate": 5,
    "depth": 1,
    "rng_seed": 7,
}

QUIET_DELAY: dict[str, Any] = {
    "propagation_seconds": 1e-6,
    "interrupt_tx": {"kind": "constant", "value_seconds": 5e-6},
    "interrupt_rx": {"kind": "constant", "value_seconds": 5e-6},
}


@pytest.fixture
def make_scenario() -> Callable[..., ScenarioConfig]:
    """Build a validated scenario from a short default run plus overrides."""

    def _make(**overrides: Any) -> ScenarioConfig:
        return build_scenario({**SHORT_RUN, **overrides})

    return _make


@pytest.fixture
def quiet_delay() -> dict[str, Any]:
    """Constant, symmetric delays: 11 µs each way with no jitter."""
    return dict(QUIET_DELAY)


def _lossy_skews_ppm(count: int, min_loss: float, min_margin: float, seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    picked: list[float] = []
    while len(picked) < count:
        skew_ppm = float(rng.uniform(-50.0, 50.0))
        ratio = 1.0 + skew_ppm / 1e6
        eps = compute_precision_loss(ratio).epsilon
        # binary32 spacing is 2**-23 on [1, 2) and 2**-24 just below 1
        half_spacing = 2.0**-24 if ratio >= 1.0 else 2.0**-25
        if abs(eps) >= min_loss and half_spacing - abs(eps) >= min_margin:
            picked.append(skew_ppm)
    return picked


@pytest.fixture(scope="session")
def lossy_skews() -> Callable[..., list[float]]:
    """Skews in ±50 ppm whose binary32 rounding loss is large and stable.

    ``min_margin`` keeps ``1 + skew`` that far from a rounding boundary, so
    estimation noise cannot flip the stored ratio to a neighbour.
    """
    return _lossy_skews_ppm
