"""
Reference, hardware and logical clocks.

The head's clock is the reference: simulation time ``t`` in seconds. Every
other node owns a ``HardwareClock`` that maps ``t`` through the first-order
affine model ``T(t) = (1 + skew)·t + offset`` and floors the result to the
1 µs tick grid. Hardware clocks are read-through views of the reference; they
never step on their own.

Logical clocks divide elapsed hardware ticks by an estimated frequency ratio,
either recursively from the last synchronization point or from the first one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_FLOOR, Context, Decimal, InvalidOperation, Overflow
from enum import Enum

import numpy as np

from .errors import ClockError
from .precision import PrecisionMode, fp_op, round_single

Ticks = int
ReferenceTime = float

MICROS_PER_SECOND = 1_000_000

_EXACT = Context(prec=60, traps=[InvalidOperation, Overflow])
_ONE = Decimal(1)


def _exact(x: float) -> Decimal:
    # Shortest round-tripping decimal of the float, so 0.1 means 0.1.
    return Decimal(repr(float(x)))


def _floor_ticks(seconds: Decimal) -> Ticks:
    return int(seconds.scaleb(6).to_integral_value(rounding=ROUND_FLOOR))


def quantize(seconds: float) -> Ticks:
    """Floor a non-negative time in seconds to whole microsecond ticks."""
    if not math.isfinite(seconds) or seconds < 0:
        raise ClockError(f"cannot quantize {seconds!r} s to unsigned ticks")
    return _floor_ticks(_exact(seconds))


def ticks_to_seconds(ticks: float) -> float:
    return ticks / MICROS_PER_SECOND


@dataclass(frozen=True)
class ClockParams:
    """Oscillator parameters of one node.

    Attributes:
        skew: Normalized frequency error; the clock runs at ``1 + skew``.
        offset: Hardware reading in seconds at reference time 0.
        drift_rate_std: Random-walk intensity of the skew in ppm per
            square-root second. 0 keeps the skew constant.
    """

    skew: float = 0.0
    offset: float = 0.0
    drift_rate_std: float = 0.0

    def __post_init__(self) -> None:
        if not 1.0 + self.skew > 0:
            raise ClockError(f"frequency ratio 1 + skew must be positive, got skew={self.skew!r}")
        if self.drift_rate_std < 0:
            raise ClockError(f"drift_rate_std must be >= 0, got {self.drift_rate_std!r}")


class HardwareClock:
    """Microsecond tick counter of a node, driven by reference time."""

    def __init__(self, params: ClockParams, rng: np.random.Generator | None = None) -> None:
        self.params = params
        self.current_skew = params.skew
        self.last_update: ReferenceTime = 0.0
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._local = _exact(params.offset)

    @property
    def drifting(self) -> bool:
        return self.params.drift_rate_std > 0

    def advance(self, t: ReferenceTime) -> None:
        """Integrate the clock up to reference time ``t``.

        Raises:
            ClockError: If ``t`` lies before the previous read.
        """
        if t < self.last_update:
            raise ClockError(
                f"clock read at t={t!r} s after a read at t={self.last_update!r} s"
            )
        if t == self.last_update:
            return
        if self.drifting:
            elapsed = _EXACT.subtract(_exact(t), _exact(self.last_update))
            rate = _EXACT.add(_ONE, _exact(self.current_skew))
            self._local = _EXACT.add(self._local, _EXACT.multiply(rate, elapsed))
            step = self.params.drift_rate_std * 1e-6 * math.sqrt(t - self.last_update)
            self.current_skew += step * float(self._rng.standard_normal())
        self.last_update = t

    def read(self, t: ReferenceTime) -> Ticks:
        """Hardware timestamp at reference time ``t``.

        Raises:
            ClockError: If ``t`` moves backwards or the reading is negative.
        """
        self.advance(t)
        if self.drifting:
            local = self._local
        else:
            rate = _EXACT.add(_ONE, _exact(self.params.skew))
            local = _EXACT.add(_EXACT.multiply(rate, _exact(t)), _exact(self.params.offset))
        ticks = _floor_ticks(local)
        if ticks < 0:
            raise ClockError(f"hardware clock reads {ticks} ticks at t={t!r} s")
        return ticks


class LogicalClockMode(str, Enum):
    """Reference point a logical clock measures elapsed ticks from."""

    ANCHORED = "anchored"
    RECURSIVE = "recursive"


@dataclass
class LogicalClockState:
    """Software clock derived from a hardware clock.

    The anchor pair is fixed at the first synchronization; ``prev_*`` move at
    every synchronization round when the recursive update is used.
    """

    anchor_local: Ticks
    anchor_logical: float
    prev_local: Ticks
    prev_logical: float
    ratio_est: float = 1.0

    def __post_init__(self) -> None:
        if not self.ratio_est > 0:
            raise ClockError(f"ratio_est must be positive, got {self.ratio_est!r}")

    @classmethod
    def anchored_at(cls, local: Ticks, logical: float | None = None) -> LogicalClockState:
        """Start a logical clock at hardware time ``local``.

        The logical value defaults to the hardware reading itself.
        """
        value = ticks_to_seconds(local) if logical is None else logical
        return cls(anchor_local=local, anchor_logical=value, prev_local=local, prev_logical=value)

    def set_ratio(self, ratio: float) -> None:
        if not ratio > 0:
            raise ClockError(f"ratio_est must be positive, got {ratio!r}")
        self.ratio_est = ratio

    def commit(self, local_now: Ticks, mode: PrecisionMode) -> None:
        """Move the recursive reference point to ``local_now``."""
        self.prev_logical = logical_recursive(self, local_now, mode)
        self.prev_local = local_now


def scaled_elapsed(elapsed: int, ratio: float, mode: PrecisionMode) -> float:
    """``elapsed / ratio`` in ticks, evaluated at ``mode``.

    The tick count is an integer timer difference and is never rounded. The
    division is split as ``elapsed - elapsed*(ratio-1)/ratio`` so that in
    single precision only the small correction term and the stored ratio
    lose bits.
    """
    if not ratio > 0:
        raise ClockError(f"frequency ratio must be positive, got {ratio!r}")
    stored = ratio if mode is PrecisionMode.DOUBLE else round_single(ratio)
    excess = stored - 1.0
    if excess == 0.0 or elapsed == 0:
        return float(elapsed)
    correction = fp_op("div", fp_op("mul", float(elapsed), excess, mode), stored, mode)
    return elapsed - correction


def logical_recursive(state: LogicalClockState, local_now: Ticks, mode: PrecisionMode) -> float:
    """Logical time from the previous synchronization point, in seconds."""
    if local_now < state.prev_local:
        raise ClockError(
            f"local time {local_now} precedes the last synchronization point {state.prev_local}"
        )
    elapsed = scaled_elapsed(local_now - state.prev_local, state.ratio_est, mode)
    return state.prev_logical + ticks_to_seconds(elapsed)


def logical_anchored(state: LogicalClockState, local_now: Ticks, mode: PrecisionMode) -> float:
    """Logical time from the first synchronization point, in seconds."""
    if local_now < state.anchor_local:
        raise ClockError(f"local time {local_now} precedes the anchor {state.anchor_local}")
    elapsed = scaled_elapsed(local_now - state.anchor_local, state.ratio_est, mode)
    return state.anchor_logical + ticks_to_seconds(elapsed)


def logical_ticks(
    state: LogicalClockState,
    local_now: Ticks,
    mode: PrecisionMode,
    clock: LogicalClockMode = LogicalClockMode.ANCHORED,
) -> Ticks:
    """The logical clock read out as a whole-microsecond timestamp."""
    if clock is LogicalClockMode.RECURSIVE:
        base_local, base_logical, name = state.prev_local, state.prev_logical, "last synchronization point"
    else:
        base_local, base_logical, name = state.anchor_local, state.anchor_logical, "anchor"
    if local_now < base_local:
        raise ClockError(f"local time {local_now} precedes the {name} {base_local}")
    # nanotick rounding strips the representation error of seconds * 1e6
    base = round(base_logical * MICROS_PER_SECOND, 3)
    elapsed = scaled_elapsed(local_now - base_local, state.ratio_est, mode)
    return math.floor(base + elapsed)
