"""
Tests for the experiment commands.

These run the full CLI through click's test runner on short scenarios.
"""

import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner
from pytest_mock import MockerFixture

from tsync import __version__
from tsync.experiment import compare_rows
from tsync.main import cli
from tsync.results import read_samples
from tsync.util import make_run_id

SHORT = "si_seconds: 1.0\nduration_seconds: 20.0\ndepth: 2\nrng_seed: 5\n"


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def scenario_file(tmp_path: Path) -> Path:
    path = tmp_path / "scenario.yaml"
    path.write_text(SHORT)
    return path


class TestRunId:
    """Test cases for run naming."""

    def test_reproducible(self) -> None:
        """Run ids depend only on the seed."""
        assert make_run_id(7) == make_run_id(7)
        assert make_run_id(7).endswith("-7")

    def test_three_words(self) -> None:
        """The slug part has at least three words."""
        slug = make_run_id(12).rsplit("-", 1)[0]
        assert len(slug.split("-")) >= 3


@pytest.mark.integration
class TestCli:
    """Test cases for the command-line interface."""

    def test_version(self, runner: CliRunner) -> None:
        """The version flag prints the package version."""
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_run(self, runner: CliRunner, scenario_file: Path, tmp_path: Path) -> None:
        """A run writes its scenario, samples, summary, histograms and message log."""
        out = tmp_path / "out"
        result = runner.invoke(cli, ["run", "-c", str(scenario_file), "-o", str(out), "-m"])
        assert result.exit_code == 0, result.output
        assert {p.name for p in out.iterdir()} == {
            "scenario.yaml", "samples.csv", "summary.json", "histogram.csv", "messages.csv",
        }
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"ahts/1.0/1", "ahts/1.0/2"}
        assert len(read_samples(out / "samples.csv")) == 200

    def test_run_writes_histograms(self, runner: CliRunner, scenario_file: Path, tmp_path: Path) -> None:
        """Each hop gets twenty 1 µs bins whose mass plus the overflow is one."""
        out = tmp_path / "out"
        assert runner.invoke(cli, ["run", "-c", str(scenario_file), "-o", str(out)]).exit_code == 0
        with open(out / "histogram.csv", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert set(rows[0]) == {"hop", "bin_center_s", "probability", "out_of_range"}
        for hop in ("1", "2"):
            hop_rows = [r for r in rows if r["hop"] == hop]
            assert len(hop_rows) == 20
            assert float(hop_rows[0]["bin_center_s"]) == pytest.approx(-9.5e-6)
            total = sum(float(r["probability"]) for r in hop_rows) + float(hop_rows[0]["out_of_range"])
            assert total == pytest.approx(1.0)

    def test_run_alias_and_seed(self, runner: CliRunner, scenario_file: Path, tmp_path: Path) -> None:
        """The ``r`` alias works and ``-s`` overrides the seed."""
        out = tmp_path / "out"
        result = runner.invoke(cli, ["r", "-c", str(scenario_file), "-o", str(out), "-s", "9"])
        assert result.exit_code == 0, result.output
        assert "rng_seed: 9" in (out / "scenario.yaml").read_text()
        assert not (out / "messages.csv").exists()

    def test_run_is_reproducible(self, runner: CliRunner, scenario_file: Path, tmp_path: Path) -> None:
        """Repeating a run reproduces its samples byte for byte."""
        for name in ("a", "b"):
            runner.invoke(cli, ["run", "-c", str(scenario_file), "-o", str(tmp_path / name)])
        assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()

    def test_resaved_scenario_reproduces_run(self, runner: CliRunner, scenario_file: Path, tmp_path: Path) -> None:
        """The scenario.yaml a run writes reproduces that run."""
        runner.invoke(cli, ["run", "-c", str(scenario_file), "-o", str(tmp_path / "a")])
        runner.invoke(cli, ["run", "-c", str(tmp_path / "a" / "scenario.yaml"), "-o", str(tmp_path / "b")])
        assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()

    def test_run_missing_config(self, runner: CliRunner, tmp_path: Path) -> None:
        """A missing scenario file exits 1."""
        result = runner.invoke(cli, ["run", "-c", str(tmp_path / "nope.yaml")])
        assert result.exit_code == 1
        assert "not found" in result.output

    def test_run_failure_is_reported(
        self, runner: CliRunner, scenario_file: Path, tmp_path: Path, mocker: MockerFixture
    ) -> None:
        """An engine failure exits 1 with the error type and message."""
        mocker.patch("tsync.experiment.run_simulation", side_effect=RuntimeError("engine stalled"))
        result = runner.invoke(cli, ["run", "-c", str(scenario_file), "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "engine stalled" in result.output
        assert "RuntimeError" in result.output

    def test_sweep(self, runner: CliRunner, tmp_path: Path) -> None:
        """A sweep runs its points in order and writes a manifest."""
        sweep = tmp_path / "sweep.yaml"
        sweep.write_text("base:\n  si_seconds: 1.0\n  duration_seconds: 20.0\nschemes: [ee-ascfr, ahts]\nseeds: [1, 2]\n")
        out = tmp_path / "sweep"
        result = runner.invoke(cli, ["sweep", "-c", str(sweep), "-o", str(out)])
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        points = manifest["points"]
        assert [(p["scheme"], p["rng_seed"]) for p in points] == [
            ("ee-ascfr", 1), ("ee-ascfr", 2), ("ahts", 1), ("ahts", 2),
        ]
        assert all((out / f"point-{i:04d}" / "samples.csv").exists() for i in range(4))
        assert all(p["beacons"] == 20 and p["reports"] == 20 for p in points)

    def test_compare(self, runner: CliRunner, tmp_path: Path) -> None:
        """Compare runs both schemes per interval and prints the table."""
        base = tmp_path / "base.yaml"
        base.write_text("duration_seconds: 40.0\nrng_seed: 3\n")
        out = tmp_path / "cmp"
        result = runner.invoke(cli, ["compare", "-c", str(base), "-o", str(out), "--si", "1", "--si", "2", "-n", "2"])
        assert result.exit_code == 0, result.output
        rows = json.loads((out / "compare.json").read_text())["rows"]
        assert [(r["scheme"], r["si_s"]) for r in rows] == [
            ("ahts", 1.0), ("ee-ascfr", 1.0), ("ahts", 2.0), ("ee-ascfr", 2.0),
        ]
        assert all(r["seeds"] == 2 for r in rows)
        assert all(0 <= r["wins"] <= 2 for r in rows if r["scheme"] == "ahts")
        assert "Measurement time estimation error" in result.output

    def test_validate_config(self, runner: CliRunner, scenario_file: Path) -> None:
        """A valid scenario passes validation."""
        result = runner.invoke(cli, ["validate-config", "-c", str(scenario_file)])
        assert result.exit_code == 0
        assert "is valid" in result.output

    def test_validate_bad_config(self, runner: CliRunner, tmp_path: Path) -> None:
        """An invalid scenario exits 1 and names the offending field."""
        path = tmp_path / "bad.yaml"
        path.write_text("si_seconds: 10.0\nduration_seconds: 50.0\n")
        result = runner.invoke(cli, ["v", "-c", str(path)])
        assert result.exit_code == 1
        assert "duration_seconds" in result.output

    def test_init(self, runner: CliRunner, tmp_path: Path) -> None:
        """``init`` refuses to overwrite an existing file."""
        path = tmp_path / "tsync.yaml"
        assert runner.invoke(cli, ["init", str(path)]).exit_code == 0
        assert path.exists()
        again = runner.invoke(cli, ["init", str(path)])
        assert again.exit_code == 1
        assert "already exists" in again.output


class TestCompareRows:
    """Test cases for seed aggregation."""

    def test_wins_are_matched_by_seed(self) -> None:
        """AHTS wins only the seeds where its error is strictly lower."""
        def entry(scheme: str, seed: int, mae: float) -> dict[str, object]:
            row = {"mae_s": mae, "mse_s2": mae**2, "count": 10, "trim_fraction": 0.1, "slope_s_per_s": None}
            return {"scheme": scheme, "si_seconds": 1.0, "rng_seed": seed, "summary": {f"{scheme}/1.0/1": row}}

        rows = compare_rows(
            [entry("ee-ascfr", 1, 5e-6), entry("ee-ascfr", 2, 1e-6), entry("ahts", 1, 2e-6), entry("ahts", 2, 2e-6)]
        )
        ahts = next(r for r in rows if r["scheme"] == "ahts")
        assert ahts["wins"] == 1
        assert ahts["mae_s"] == pytest.approx(2e-6)
        assert ahts["count"] == 20
