"""
End-to-end behaviour of the two schemes over full one-hour runs.

Most of these sweep several seeds and are marked slow; deselect them with
``-m "not slow"``.
"""

from collections.abc import Callable
from pathlib import Path
from statistics import mean
from typing import Any

import pytest

from tsync.config import ScenarioConfig, build_scenario
from tsync.metrics import error_growth_slope, histogram, trimmed_stats
from tsync.precision import compute_precision_loss
from tsync.results import write_samples
from tsync.simnet import RunResult, run

HOUR: dict[str, Any] = {"duration_seconds": 3600.0, "bundle_size": 5, "measurement_rate": 5}


def _scenario(**overrides: Any) -> ScenarioConfig:
    return build_scenario({**HOUR, **overrides})


def _mae(result: RunResult, hop: int = 1) -> float:
    samples = [s for s in result.samples if s.hop == hop]
    return trimmed_stats(samples, result.config.duration_seconds, result.config.trim_fraction).mae


class TestZeroNoise:
    """Constant symmetric delays leave only tick quantization."""

    @pytest.mark.parametrize("skew_ppm", [-100.0, -37.3, 0.0, 61.7, 100.0])
    def test_short_runs_any_skew(self, skew_ppm: float, quiet_delay: dict[str, Any]) -> None:
        """Quiet delays bound every error by two ticks whatever the skew."""
        result = run(
            _scenario(
                scheme="ahts", si_seconds=1.0, duration_seconds=120.0, delay=quiet_delay,
                sensor_precision="double", clocks=[{"skew_ppm": skew_ppm, "offset_seconds": 0.7}],
            )
        )
        self._check(result)

    def test_hour_long_run(self, quiet_delay: dict[str, Any]) -> None:
        """An hour of sampled clocks keeps every error within two ticks."""
        result = run(
            _scenario(
                scheme="ahts", si_seconds=1.0, delay=quiet_delay, sensor_precision="double",
                clock_sampler={"skew_max_ppm": 100.0}, rng_seed=1,
            )
        )
        assert len(result.samples) == 18_000
        self._check(result)

    @staticmethod
    def _check(result: RunResult) -> None:
        assert max(abs(s.error) for s in result.samples) <= 2e-6


@pytest.mark.slow
class TestPrecisionLossGrowth:
    """EE-ASCFR error ramps linearly at the binary32 loss of the sensor's ratio."""

    @pytest.fixture(scope="class")
    def runs(self, lossy_skews: Callable[..., list[float]]) -> list[RunResult]:
        skews = lossy_skews(10, min_loss=2.5e-8, min_margin=1.5e-8, seed=11)
        return [
            run(
                _scenario(
                    scheme="ee-ascfr", si_seconds=10.0, sensor_precision="single", rng_seed=seed,
                    clocks=[{"skew_ppm": skew, "offset_seconds": 0.4}],
                )
            )
            for seed, skew in enumerate(skews)
        ]

    @staticmethod
    def _loss(result: RunResult) -> float:
        return compute_precision_loss(1.0 + result.clock_params[1].skew).epsilon

    def test_slope_matches_loss(self, runs: list[RunResult]) -> None:
        """The fitted error slope matches the ratio's binary32 loss."""
        for result in runs:
            eps = self._loss(result)
            kept = [s for s in result.samples if s.event_ref_time >= 360.0]
            slope = error_growth_slope(kept)
            assert 0.5 <= slope / eps <= 2.0

    def test_error_tracks_elapsed_times_loss(self, runs: list[RunResult]) -> None:
        """Past ten minutes each error is elapsed time times the loss."""
        for result in runs:
            eps = self._loss(result)
            for s in result.samples:
                if s.event_ref_time >= 600.0:
                    assert 0.5 <= abs(s.error) / abs(s.event_ref_time * eps) <= 2.0

    def test_ramp_at_twenty_minutes(self, runs: list[RunResult]) -> None:
        """Twenty minutes in, the ramp sits between 20 and 500 µs."""
        for result in runs:
            near = [abs(s.error) for s in result.samples if 1190.0 <= s.event_ref_time <= 1210.0]
            assert near
            assert all(20e-6 <= e <= 500e-6 for e in near)


@pytest.mark.slow
class TestSchemeOrdering:
    """Head-side estimation beats sensor-side binary32 estimation on matched seeds."""

    @pytest.mark.parametrize("si", [1.0, 10.0, 100.0])
    def test_ahts_wins_every_seed(self, si: float, lossy_skews: Callable[..., list[float]]) -> None:
        """Every seed and interval favours head-side estimation."""
        for seed, skew in enumerate(lossy_skews(10, min_loss=1.5e-8, min_margin=0.0, seed=5)):
            common = {"si_seconds": si, "rng_seed": seed, "clocks": [{"skew_ppm": skew, "offset_seconds": 0.2}]}
            ahts = _mae(run(_scenario(scheme="ahts", **common)))
            ee = _mae(run(_scenario(scheme="ee-ascfr", **common)))
            assert ahts < ee
            assert ahts < 10e-6


@pytest.mark.slow
class TestIntervalSensitivity:
    """With drifting clocks AHTS error grows with the synchronization interval."""

    def test_majority_monotone(self) -> None:
        """Most seeds order the error by interval length."""
        monotone = 0
        for seed in range(10):
            mae = {
                si: _mae(
                    run(
                        _scenario(
                            scheme="ahts", si_seconds=si, rng_seed=seed,
                            clock_sampler={"drift_rate_std_ppm": 0.02},
                        )
                    )
                )
                for si in (1.0, 10.0, 100.0)
            }
            if mae[100.0] > mae[10.0] >= mae[1.0]:
                monotone += 1
        assert monotone > 5


@pytest.mark.slow
class TestMultiHop:
    """Errors accumulate slowly down a three-hop AHTS chain."""

    @pytest.fixture(scope="class")
    def runs(self) -> list[RunResult]:
        return [run(_scenario(scheme="ahts", si_seconds=1.0, depth=3, rng_seed=seed)) for seed in range(20)]

    def test_mae_grows_by_hop(self, runs: list[RunResult]) -> None:
        """Each hop adds a little, under a microsecond, to the mean error."""
        per_hop = [mean(_mae(r, hop) for r in runs) for hop in (1, 2, 3)]
        for lower, upper in zip(per_hop, per_hop[1:]):
            assert 0 < upper - lower <= 1e-6

    def test_errors_stay_within_ten_microseconds(self, runs: list[RunResult]) -> None:
        """At least 95 % of three-hop errors land inside ±10 µs."""
        samples = [s for r in runs for s in r.samples]
        assert histogram(samples).in_range >= 0.95


class TestMessageCounts:
    """Each round costs one beacon and one report per hop."""

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_hundred_rounds(self, depth: int) -> None:
        """A hundred rounds cost a hundred beacons and reports per hop."""
        result = run(build_scenario({"si_seconds": 1.0, "duration_seconds": 100.0, "depth": depth, "rng_seed": depth}))
        assert result.config.rounds == 100
        assert result.count("beacon") == 100 * depth
        assert result.count("report") == 100 * depth
        assert result.undelivered == 0


class TestDeterminism:
    """Identical configuration and seed give byte-identical sample files."""

    @pytest.mark.parametrize("scheme", ["ee-ascfr", "ahts"])
    def test_sample_files_identical(self, scheme: str, tmp_path: Path) -> None:
        """Two runs of one seed write the same bytes."""
        cfg = build_scenario(
            {
                "scheme": scheme, "si_seconds": 1.0, "duration_seconds": 60.0, "depth": 2, "rng_seed": 21,
                "clock_sampler": {"drift_rate_std_ppm": 0.05},
            }
        )
        for name in ("a.csv", "b.csv"):
            write_samples(run(cfg).samples, tmp_path / name, "run", scheme, 1.0)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
