"""
Frequency-ratio, offset and delay estimation plus timestamp translation.

All tick arithmetic here works in the clock frame of the *upper* node of a
link: ``t1``/``t4`` are upper-clock stamps, ``t2``/``t3`` lower-clock stamps.
A lower clock is modeled as ``T_lower = ratio * T_upper + offset`` with the
offset expressed in lower-clock ticks.

Two-way algebra used by ``offset_delay``::

    turnaround = (t3 - t2) / ratio         # lower interval in upper ticks
    round_trip = (t4 - t1) - turnaround    # forward + reverse delay
    delay      = round_trip / 2
    offset     = t2 - ratio * (t1 + delay)

Substituting ``t2 = ratio*(t1 + d) + offset`` and
``t4 = t1 + 2d + (t3 - t2)/ratio`` returns exactly ``(offset, d)``, so with
equal one-way delays the only residual is tick quantization.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .clockcore import MICROS_PER_SECOND, Ticks
from .errors import EstimationError
from .precision import PrecisionLoss, PrecisionMode, fp_op

if TYPE_CHECKING:
    from .protocol import SyncRecord

logger = logging.getLogger(__name__)

# Quantization can make a near-zero round trip come out slightly negative.
ROUND_TRIP_SLACK_TICKS = 2.0


@dataclass(frozen=True)
class EstimatorState:
    """Estimates for one link, anchored at its first synchronization round.

    ``ratio_est`` stays ``None`` until a second round makes the cumulative
    ratio defined.
    """

    t1_zero: Ticks
    t2_zero: Ticks
    ratio_est: float | None = None
    offset_est: float = 0.0
    delay_est: float = 0.0
    last_round: int = 0

    def __post_init__(self) -> None:
        if self.ratio_est is not None and not self.ratio_est > 0:
            raise EstimationError(f"ratio_est must be positive, got {self.ratio_est!r}")
        if self.delay_est < 0:
            raise EstimationError(f"delay_est must be >= 0, got {self.delay_est!r}")

    @property
    def ready(self) -> bool:
        return self.ratio_est is not None


TranslationChain = Sequence[EstimatorState]


def cr_ratio(
    t1_zero: Ticks,
    t2_zero: Ticks,
    t1_k: Ticks,
    t2_k: Ticks,
    mode: PrecisionMode = PrecisionMode.DOUBLE,
) -> float:
    """Cumulative frequency ratio ``(t2_k - t2_zero) / (t1_k - t1_zero)``."""
    upper_elapsed = t1_k - t1_zero
    if upper_elapsed <= 0:
        raise EstimationError(
            f"cumulative ratio undefined: t1_k={t1_k} does not follow t1_zero={t1_zero}"
        )
    return fp_op("div", float(t2_k - t2_zero), float(upper_elapsed), mode)


def cr_skew(
    t1_zero: Ticks,
    t2_zero: Ticks,
    t1_k: Ticks,
    t2_k: Ticks,
    mode: PrecisionMode = PrecisionMode.DOUBLE,
) -> float:
    """The cumulative-ratio estimator in skew form, ``ratio - 1``.

    The numerator is the exact integer tick excess of the lower clock, so in
    single precision only the quotient and the large denominator round.
    """
    upper_elapsed = t1_k - t1_zero
    if upper_elapsed <= 0:
        raise EstimationError(
            f"cumulative skew undefined: t1_k={t1_k} does not follow t1_zero={t1_zero}"
        )
    excess = (t2_k - t2_zero) - upper_elapsed
    return fp_op("div", float(excess), float(upper_elapsed), mode)


def offset_delay(
    rec: SyncRecord,
    ratio: float,
    mode: PrecisionMode = PrecisionMode.DOUBLE,
) -> tuple[float, float]:
    """Offset and one-way delay of a link from one round's timestamps.

    Returns:
        ``(offset_est, delay_est)`` in seconds.

    Raises:
        EstimationError: If the timestamps are out of order or the round
            trip is negative beyond quantization slack.
    """
    if not ratio > 0:
        raise EstimationError(f"ratio must be positive, got {ratio!r}")
    if rec.t3 < rec.t2 or rec.t4 < rec.t1:
        raise EstimationError(f"timestamps out of order in round {rec.round_k}: {rec}")

    turnaround = fp_op("div", float(rec.t3 - rec.t2), ratio, mode)
    round_trip = fp_op("sub", float(rec.t4 - rec.t1), turnaround, mode)
    if round_trip < -ROUND_TRIP_SLACK_TICKS:
        raise EstimationError(
            f"negative round trip of {round_trip:.3f} ticks on link "
            f"{rec.upper_node}->{rec.lower_node} round {rec.round_k}"
        )
    delay_ticks = fp_op("div", max(round_trip, 0.0), 2.0, mode)
    upper_at_rx = fp_op("add", float(rec.t1), delay_ticks, mode)
    offset_ticks = fp_op("sub", float(rec.t2), fp_op("mul", ratio, upper_at_rx, mode), mode)
    return offset_ticks / MICROS_PER_SECOND, delay_ticks / MICROS_PER_SECOND


def _to_upper_ticks(t: float, est: EstimatorState, mode: PrecisionMode) -> float:
    if est.ratio_est is None:
        raise EstimationError("link has no frequency ratio estimate yet")
    if t < est.t2_zero:
        raise EstimationError(f"timestamp {t} precedes the link anchor {est.t2_zero}")
    elapsed = fp_op("sub", t, float(est.t2_zero), mode)
    start = fp_op("add", float(est.t1_zero), est.delay_est * MICROS_PER_SECOND, mode)
    return fp_op("add", start, fp_op("div", elapsed, est.ratio_est, mode), mode)


def translate_timestamp(
    t_m: Ticks,
    est: EstimatorState,
    mode: PrecisionMode = PrecisionMode.DOUBLE,
) -> float:
    """Map a lower-clock timestamp to the upper clock, in seconds.

    ``t1_zero + delay_est + (t_m - t2_zero) / ratio_est``
    """
    return _to_upper_ticks(float(t_m), est, mode) / MICROS_PER_SECOND


def translate_chain(
    t_m: Ticks,
    chain: TranslationChain,
    mode: PrecisionMode = PrecisionMode.DOUBLE,
) -> float:
    """Map a timestamp from the bottom of a chain to reference seconds.

    ``chain`` is ordered top-down, starting at the link below the head. Each
    hop re-expresses the value in the upper node's tick coordinates; nothing
    is re-quantized on the way up.
    """
    if not chain:
        raise EstimationError("translation chain is empty")
    value = float(t_m)
    for est in reversed(chain):
        value = _to_upper_ticks(value, est, mode)
    return value / MICROS_PER_SECOND


def predicted_error(elapsed_ticks: Ticks, eps: PrecisionLoss) -> float:
    """Accumulated logical-clock error from a precision loss, in seconds."""
    return -(elapsed_ticks * eps.epsilon) / MICROS_PER_SECOND


def taylor_quotient(x: float, skew: float) -> float:
    """First-order approximation of ``x / (1 + skew)``."""
    return x * (1.0 - skew)


class LinkEstimator:
    """Head-side estimation pipeline for one link of the chain.

    The link is anchored once from the first round's ``(T1, T2)`` and then
    updated from every complete ``SyncRecord``. ``fixed_ratio`` pins the
    frequency ratio, for links whose lower node already runs a
    frequency-corrected clock. With ``reanchor_rounds > 0`` the anchor moves
    to the newest round once it is that many rounds old.

    The anchor round itself never yields estimates: its ``T3`` was stamped
    before the lower node had any frequency correction.
    """

    def __init__(
        self,
        upper_node: int,
        lower_node: int,
        mode: PrecisionMode = PrecisionMode.DOUBLE,
        fixed_ratio: float | None = None,
        reanchor_rounds: int = 0,
    ) -> None:
        if fixed_ratio is not None and not fixed_ratio > 0:
            raise EstimationError(f"fixed_ratio must be positive, got {fixed_ratio!r}")
        if reanchor_rounds < 0:
            raise EstimationError(f"reanchor_rounds must be >= 0, got {reanchor_rounds}")
        self.upper_node = upper_node
        self.lower_node = lower_node
        self.mode = mode
        self.fixed_ratio = fixed_ratio
        self.reanchor_rounds = reanchor_rounds
        self.state: EstimatorState | None = None
        self.anchor_round: int | None = None
        self.last_applied: int | None = None

    @property
    def anchored(self) -> bool:
        return self.state is not None

    @property
    def ready(self) -> bool:
        return self.state is not None and self.state.ready

    def anchor(self, round_k: int, t1_zero: Ticks, t2_zero: Ticks) -> None:
        """Latch the first-round anchors; later calls are ignored."""
        if self.state is not None:
            return
        self.state = EstimatorState(t1_zero=t1_zero, t2_zero=t2_zero, last_round=round_k)
        self.anchor_round = round_k
        logger.debug(
            "link %d->%d anchored at round %d (T1=%d, T2=%d)",
            self.upper_node, self.lower_node, round_k, t1_zero, t2_zero,
        )

    def update(self, rec: SyncRecord) -> EstimatorState:
        """Fold one round's timestamps into the link estimates.

        Records older than the latest applied round are ignored.
        """
        if self.state is None or self.anchor_round is None:
            raise EstimationError(
                f"link {self.upper_node}->{self.lower_node} updated before its anchors arrived"
            )
        state = self.state
        if self.last_applied is not None and rec.round_k <= self.last_applied:
            return state
        if rec.round_k < self.anchor_round:
            return state
        self.last_applied = rec.round_k

        if rec.round_k == self.anchor_round:
            ratio: float | None = None
        elif self.fixed_ratio is not None:
            ratio = self.fixed_ratio
        else:
            ratio = cr_ratio(state.t1_zero, state.t2_zero, rec.t1, rec.t2, self.mode)

        if ratio is None:
            self.state = EstimatorState(state.t1_zero, state.t2_zero, last_round=rec.round_k)
            return self.state

        offset, delay = offset_delay(rec, ratio, self.mode)
        if self.reanchor_rounds and rec.round_k - self.anchor_round >= self.reanchor_rounds:
            self.state = EstimatorState(rec.t1, rec.t2, ratio, offset, delay, rec.round_k)
            self.anchor_round = rec.round_k
            logger.debug("link %d->%d re-anchored at round %d", self.upper_node, self.lower_node, rec.round_k)
        else:
            self.state = EstimatorState(state.t1_zero, state.t2_zero, ratio, offset, delay, rec.round_k)
        return self.state
