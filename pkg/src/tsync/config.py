"""
Configuration management for simulation scenarios and sweeps.

This module provides Pydantic models for parsing YAML scenario and sweep
files. Keys carry their unit in the name (``si_seconds``, ``skew_ppm``).
"""

from __future__ import annotations

import itertools
from decimal import ROUND_FLOOR, Decimal
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .clockcore import ClockParams, LogicalClockMode
from .errors import ConfigError
from .precision import PrecisionMode
from .protocol import SchemeMode

PPM = 1_000_000


class ConstantDelay(BaseModel):
    """A fixed delay."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["constant"] = "constant"
    value_seconds: float = Field(default=0.0, ge=0, description="Delay in seconds")

    def sample(self, rng: np.random.Generator) -> float:
        return self.value_seconds


class UniformDelay(BaseModel):
    """A delay drawn uniformly from ``[low_seconds, high_seconds]``."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["uniform"] = "uniform"
    low_seconds: float = Field(default=0.0, ge=0, description="Lower bound in seconds")
    high_seconds: float = Field(default=0.0, ge=0, description="Upper bound in seconds")

    @model_validator(mode="after")
    def _ordered(self) -> UniformDelay:
        if self.low_seconds > self.high_seconds:
            raise ValueError(
                f"low_seconds ({self.low_seconds}) exceeds high_seconds ({self.high_seconds})"
            )
        return self

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low_seconds, self.high_seconds))


class GaussianDelay(BaseModel):
    """A normally distributed delay, clamped at zero."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["gaussian"] = "gaussian"
    mean_seconds: float = Field(default=0.0, description="Mean in seconds")
    std_seconds: float = Field(default=0.0, ge=0, description="Standard deviation in seconds")

    def sample(self, rng: np.random.Generator) -> float:
        return max(0.0, float(rng.normal(self.mean_seconds, self.std_seconds)))


DelaySpec = Annotated[
    Union[ConstantDelay, UniformDelay, GaussianDelay], Field(discriminator="kind")
]


def _default_interrupt() -> UniformDelay:
    return UniformDelay(low_seconds=4e-6, high_seconds=6e-6)


class DelayModel(BaseModel):
    """One-way message latency: propagation plus both interrupt latencies."""

    model_config = ConfigDict(extra="forbid")

    propagation_seconds: float = Field(default=1e-6, ge=0, description="Propagation delay")
    interrupt_tx: DelaySpec = Field(
        default_factory=_default_interrupt, description="Transmit interrupt latency"
    )
    interrupt_rx: DelaySpec = Field(
        default_factory=_default_interrupt, description="Receive interrupt latency"
    )


class ClockParamsConfig(BaseModel):
    """Explicit oscillator parameters of one sensor."""

    model_config = ConfigDict(extra="forbid")

    skew_ppm: float = Field(default=0.0, gt=-PPM, description="Frequency error in ppm")
    offset_seconds: float = Field(default=0.0, ge=0, description="Clock reading at t = 0")
    drift_rate_std_ppm: float = Field(
        default=0.0, ge=0, description="Skew random-walk intensity in ppm per sqrt(s)"
    )

    def to_params(self) -> ClockParams:
        return ClockParams(
            skew=self.skew_ppm / PPM,
            offset=self.offset_seconds,
            drift_rate_std=self.drift_rate_std_ppm,
        )


class ClockSamplerConfig(BaseModel):
    """Seeded sampler for sensor clocks when none are listed explicitly."""

    model_config = ConfigDict(extra="forbid")

    skew_max_ppm: float = Field(default=50.0, ge=0, lt=PPM, description="Skews drawn in +/- this")
    offset_max_seconds: float = Field(default=1.0, ge=0, description="Offsets drawn in [0, this]")
    drift_rate_std_ppm: float = Field(
        default=0.0, ge=0, description="Skew random-walk intensity in ppm per sqrt(s)"
    )

    def sample(self, rng: np.random.Generator, count: int) -> list[ClockParams]:
        skews = rng.uniform(-self.skew_max_ppm, self.skew_max_ppm, size=count)
        offsets = rng.uniform(0.0, self.offset_max_seconds, size=count)
        return [
            ClockParams(
                skew=float(skew) / PPM,
                offset=float(offset),
                drift_rate_std=self.drift_rate_std_ppm,
            )
            for skew, offset in zip(skews, offsets)
        ]


class ScenarioConfig(BaseModel):
    """Configuration of one simulation run."""

    model_config = ConfigDict(extra="forbid")

    scheme: SchemeMode = Field(default=SchemeMode.AHTS, description="ee-ascfr or ahts")
    si_seconds: float = Field(default=1.0, gt=0, description="Synchronization interval")
    duration_seconds: float = Field(default=3600.0, gt=0, description="Simulated time")
    bundle_size: int = Field(default=5, ge=1, le=65535, description="Measurements per report")
    measurement_rate: int = Field(default=5, ge=1, description="Measurements per SI per sensor")
    depth: int = Field(default=1, ge=1, le=65535, description="Number of sensors in the chain")
    rng_seed: int = Field(default=0, ge=0, lt=2**64, description="Seed for every random draw")
    trim_fraction: float = Field(default=0.1, ge=0, lt=1, description="Transient to discard")

    delay: DelayModel = Field(default_factory=DelayModel, description="Message delay model")
    link_propagation_seconds: list[Annotated[float, Field(ge=0)]] | None = Field(
        default=None, description="Per-link propagation delay, head link first"
    )
    clocks: list[ClockParamsConfig] | None = Field(
        default=None, description="Explicit sensor clocks, hop 1 first"
    )
    clock_sampler: ClockSamplerConfig = Field(
        default_factory=ClockSamplerConfig, description="Used when clocks is not given"
    )

    sensor_precision: PrecisionMode = Field(
        default=PrecisionMode.SINGLE, description="Arithmetic of EE-ASCFR sensors"
    )
    logical_clock: LogicalClockMode = Field(
        default=LogicalClockMode.ANCHORED,
        description="EE-ASCFR logical clock: anchored at the first sync or recursive from the last",
    )
    processing_delay_seconds: float = Field(
        default=100e-6, ge=0, description="Delay before a node transmits a triggered message"
    )
    report_deadline_fraction: float = Field(
        default=0.95, gt=0, lt=1, description="Latest report time after a beacon, in SIs"
    )
    loss_probability: float = Field(default=0.0, ge=0, lt=1, description="Per-message loss")
    reanchor_rounds: int = Field(default=0, ge=0, description="Head re-anchoring period; 0 = never")
    drift_step_seconds: float = Field(
        default=1.0, gt=0, description="Interval of drift integration events"
    )

    @model_validator(mode="after")
    def _cross_field(self) -> ScenarioConfig:
        if self.duration_seconds < 10 * self.si_seconds:
            raise ValueError(
                f"duration_seconds ({self.duration_seconds}) must be at least "
                f"10 * si_seconds ({10 * self.si_seconds})"
            )
        if self.clocks is not None and len(self.clocks) != self.depth:
            raise ValueError(f"clocks lists {len(self.clocks)} sensors but depth is {self.depth}")
        if self.link_propagation_seconds is not None and len(self.link_propagation_seconds) != self.depth:
            raise ValueError(
                f"link_propagation_seconds lists {len(self.link_propagation_seconds)} links "
                f"but depth is {self.depth}"
            )
        return self

    @property
    def rounds(self) -> int:
        """Number of synchronization rounds, ``floor(duration / SI)``."""
        ratio = Decimal(repr(self.duration_seconds)) / Decimal(repr(self.si_seconds))
        return int(ratio.to_integral_value(rounding=ROUND_FLOOR))

    def propagation(self, lower_node: int) -> float:
        if self.link_propagation_seconds is not None:
            return self.link_propagation_seconds[lower_node - 1]
        return self.delay.propagation_seconds

    def with_updates(self, **updates: Any) -> ScenarioConfig:
        """Copy with some fields replaced, re-running validation."""
        return build_scenario({**self.model_dump(mode="json"), **updates})


class SweepSpec(BaseModel):
    """A base scenario plus axes whose Cartesian product forms the sweep."""

    model_config = ConfigDict(extra="forbid")

    base: ScenarioConfig = Field(default_factory=ScenarioConfig, description="Shared settings")
    schemes: list[SchemeMode] | None = Field(default=None, description="Scheme axis")
    si_seconds: list[Annotated[float, Field(gt=0)]] | None = Field(default=None, description="SI axis")
    depths: list[Annotated[int, Field(ge=1)]] | None = Field(default=None, description="Depth axis")
    seeds: list[Annotated[int, Field(ge=0)]] | None = Field(default=None, description="Seed axis")

    def points(self) -> list[ScenarioConfig]:
        """Every axes combination, scheme-major then SI, depth and seed.

        Raises:
            ConfigError: If a combination violates a scenario constraint.
        """
        axes = itertools.product(
            self.schemes or [self.base.scheme],
            self.si_seconds or [self.base.si_seconds],
            self.depths or [self.base.depth],
            self.seeds or [self.base.rng_seed],
        )
        return [
            self.base.with_updates(scheme=scheme, si_seconds=si, depth=depth, rng_seed=seed)
            for scheme, si, depth, seed in axes
        ]


def build_scenario(data: dict[str, Any]) -> ScenarioConfig:
    """Validate a mapping as a scenario, raising ``ConfigError`` on failure."""
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario: {e}") from e


class ConfigLoader:
    """Loader for scenario and sweep files."""

    def __init__(self, config_path: str | Path | None = None) -> None:
        """Initialize the config loader.

        Args:
            config_path: Path to the configuration file. If None, looks for
                        config files in common locations.
        """
        self.config_path = Path(config_path) if config_path else None

    def find_config_file(self) -> Path | None:
        """Find configuration file in common locations.

        Returns:
            Path to the configuration file if found, None otherwise.
        """
        if self.config_path:
            return self.config_path if self.config_path.exists() else None

        for location in (Path("tsync.yaml"), Path("tsync.yml")):
            if location.exists():
                return location

        return None

    def _read(self) -> dict[str, Any]:
        config_file = self.find_config_file()
        if config_file is None:
            if self.config_path is not None:
                raise ConfigError(f"Configuration file not found: {self.config_path}")
            return {}

        try:
            with open(config_file, "r", encoding="utf-8") as f:
                config_data = yaml.safe_load(f)
        except (yaml.YAMLError, OSError) as e:
            raise ConfigError(f"Failed to load configuration from {config_file}: {e}") from e

        if config_data is None:
            return {}
        if not isinstance(config_data, dict):
            raise ConfigError(f"{config_file} does not contain a mapping")
        return config_data

    def load_config(self) -> ScenarioConfig:
        """Load a scenario from file or return defaults.

        Returns:
            ScenarioConfig instance with loaded or default values.
        """
        return build_scenario(self._read())

    def load_sweep(self) -> SweepSpec:
        """Load a sweep file; a plain scenario file becomes a one-point sweep."""
        data = self._read()
        if "base" not in data:
            return SweepSpec(base=build_scenario(data))
        try:
            return SweepSpec.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid sweep: {e}") from e

    def save_config(self, config: BaseModel, path: str | Path | None = None) -> None:
        """Save a scenario or sweep to a YAML file.

        Args:
            config: Model instance to save
            path: Path to save the configuration to. If None, uses the
                  loader's config path.
        """
        save_path = Path(path) if path else self.config_path

        if save_path is None:
            raise ConfigError("No path specified for saving configuration")

        save_path.parent.mkdir(parents=True, exist_ok=True)

        try:
            with open(save_path, "w", encoding="utf-8") as f:
                yaml.safe_dump(
                    config.model_dump(mode="json"),
                    f,
                    default_flow_style=False,
                    indent=2,
                    sort_keys=False,
                )
        except OSError as e:
            raise ConfigError(f"Failed to save configuration to {save_path}: {e}") from e


def load_scenario_config(config_path: str | Path | None = None) -> ScenarioConfig:
    """Convenience function to load a scenario.

    Args:
        config_path: Optional path to configuration file

    Returns:
        ScenarioConfig instance
    """
    return ConfigLoader(config_path).load_config()


def create_sample_config(path: str | Path) -> None:
    """Create a sample scenario file with the published experiment settings.

    Args:
        path: Path where to create the sample configuration
    """
    sample_config = ScenarioConfig(
        scheme=SchemeMode.AHTS,
        si_seconds=10.0,
        duration_seconds=3600.0,
        bundle_size=5,
        measurement_rate=5,
        depth=3,
        rng_seed=1,
    )
    ConfigLoader().save_config(sample_config, path)
