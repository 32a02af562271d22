"""
Messages and per-role state machines of the reverse two-way exchange.

The head starts every round with a Beacon/Request. Each sensor answers it
with a Report/Response that carries its bundled measurements, the round's
``T2``/``T3`` stamps and whatever it relays for the nodes below it. A node
whose bundle fills more than once per round sends further reports.
A gateway is a sensor that also forwards beacons down the chain and appends
the four timestamps of its lower link to the reports it passes up.

Where the work happens depends on the scheme:

- ``EE_ASCFR``: sensors estimate their frequency ratio and run a logical
  clock in limited precision, anchored or recursive; every stamp they emit
  is a logical clock reading. The head only compensates offset and delay.
- ``AHTS``: sensors only read their hardware clocks. The head estimates
  every link at full precision and translates measurements down the chain.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from enum import Enum

from .clockcore import LogicalClockMode, LogicalClockState, Ticks, logical_ticks
from .errors import EstimationError, OracleLeakError, ProtocolError
from .estimation import LinkEstimator, cr_skew, translate_chain
from .precision import PrecisionMode, charged_to, fp_op

logger = logging.getLogger(__name__)

HEAD_ID = 0

_estimating: ContextVar[bool] = ContextVar("tsync_estimating", default=False)


@contextmanager
def estimating() -> Iterator[None]:
    """Mark the enclosed code as estimator code that must not see ground truth."""
    token = _estimating.set(True)
    try:
        yield
    finally:
        _estimating.reset(token)


class SchemeMode(str, Enum):
    """Placement of the synchronization computation."""

    EE_ASCFR = "ee-ascfr"
    AHTS = "ahts"

    @property
    def sensor_estimates(self) -> bool:
        return self is SchemeMode.EE_ASCFR


class NodeRole(str, Enum):
    HEAD = "head"
    SENSOR = "sensor"
    GATEWAY = "gateway"


@dataclass(frozen=True)
class BeaconRequest:
    round_k: int
    t1: Ticks
    hop_origin: int


@dataclass(frozen=True)
class Measurement:
    """A timestamped sensing event.

    ``true_ref_time`` is simulator ground truth. It never goes on the wire
    and is unreadable from inside ``estimating()``.
    """

    seq: int
    t_m: Ticks
    true_ref_time: float | None = field(default=None, repr=False, compare=False)

    def reveal_truth(self) -> float:
        if _estimating.get():
            raise OracleLeakError(f"ground truth of measurement {self.seq} read by an estimator")
        if self.true_ref_time is None:
            raise OracleLeakError(f"measurement {self.seq} carries no ground truth")
        return self.true_ref_time

    def public(self) -> Measurement:
        return Measurement(self.seq, self.t_m)


@dataclass(frozen=True)
class SyncRecord:
    """The four timestamps of one round on one link."""

    round_k: int
    upper_node: int
    lower_node: int
    t1: Ticks
    t2: Ticks
    t3: Ticks
    t4: Ticks

    def __post_init__(self) -> None:
        if self.t3 < self.t2:
            raise ProtocolError(f"T3 precedes T2 in {self}")
        if self.t4 <= self.t1:
            raise ProtocolError(f"T4 does not follow T1 in {self}")


@dataclass(frozen=True)
class AnchorRecord:
    """First-round ``(T1, T2)`` of a link, relayed so the head can anchor it."""

    round_k: int
    upper_node: int
    lower_node: int
    t1: Ticks
    t2: Ticks


@dataclass(frozen=True)
class RelayedBundle:
    node_id: int
    measurements: tuple[Measurement, ...]


@dataclass(frozen=True)
class ReportResponse:
    origin: int
    round_k: int
    t2: Ticks
    t3: Ticks
    t2_zero: Ticks | None = None
    zero_round: int | None = None
    bundle: tuple[Measurement, ...] = ()
    relayed_sync: tuple[SyncRecord, ...] = ()
    relayed_anchors: tuple[AnchorRecord, ...] = ()
    relayed_bundles: tuple[RelayedBundle, ...] = ()


@dataclass
class _Relay:
    incoming: ReportResponse
    lower_sync: SyncRecord
    lower_anchor: AnchorRecord | None


@dataclass
class SensorState:
    """Protocol state of one sensor or gateway.

    Stamps issued by the node are hardware ticks in AHTS and logical clock
    ticks in EE-ASCFR.

    The first report of a round is its synchronization response. Any later
    report in the same round repeats ``T2`` and only moves data.
    """

    node_id: int
    upper_node: int
    scheme: SchemeMode
    bundle_size: int
    child: int | None = None
    precision: PrecisionMode = PrecisionMode.SINGLE
    logical_clock: LogicalClockMode = LogicalClockMode.ANCHORED

    zero_round: int | None = None
    t1_zero: Ticks | None = None
    t2_zero: Ticks | None = None
    t2_zero_acked: bool = False
    logical: LogicalClockState | None = None

    beacons: dict[int, tuple[Ticks, Ticks]] = field(default_factory=dict)
    current_round: int | None = None
    responded: set[int] = field(default_factory=set)
    deadline_passed: set[int] = field(default_factory=set)
    staged: list[Measurement] = field(default_factory=list)

    child_t1: dict[int, Ticks] = field(default_factory=dict)
    child_reported: set[int] = field(default_factory=set)
    relay_queue: list[_Relay] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.bundle_size < 1:
            raise ProtocolError(f"bundle size must be >= 1, got {self.bundle_size}")

    @property
    def role(self) -> NodeRole:
        return NodeRole.GATEWAY if self.child is not None else NodeRole.SENSOR

    @property
    def synchronized(self) -> bool:
        return self.zero_round is not None

    @property
    def awaiting_response(self) -> bool:
        return self.current_round is not None and self.current_round not in self.responded

    @property
    def bundle_full(self) -> bool:
        return len(self.staged) >= self.bundle_size

    @property
    def ratio_est(self) -> float:
        return self.logical.ratio_est if self.logical is not None else 1.0

    def stamp(self, local: Ticks) -> Ticks:
        """Timestamp a hardware reading the way this node reports times."""
        if self.logical is None:
            return local
        with charged_to(self.node_id):
            return logical_ticks(self.logical, local, self.precision, self.logical_clock)

    def ready_to_report(self) -> bool:
        """Whether a report should leave now.

        The round's response goes once the bundle is full or the round
        deadline has passed, and for a gateway only after the child's report
        for the round is in. After that, a report goes whenever the bundle
        fills again or a child's report waits to be relayed.
        """
        if self.current_round is None:
            return False
        if self.awaiting_response:
            if not (self.bundle_full or self.current_round in self.deadline_passed):
                return False
            return self.child is None or self.current_round in self.child_reported
        return self.bundle_full or bool(self.relay_queue)

    def has_pending(self) -> bool:
        """Anything a final flush would still have to send."""
        return self.awaiting_response or bool(self.staged) or bool(self.relay_queue)


@dataclass
class HeadState:
    """The head: beacon source, estimator host and measurement translator."""

    scheme: SchemeMode
    depth: int
    reanchor_rounds: int = 0
    next_round: int = 0
    beacon_log: dict[int, Ticks] = field(default_factory=dict)
    links: dict[int, LinkEstimator] = field(default_factory=dict)
    pending: list[tuple[int, Measurement]] = field(default_factory=list)
    untranslatable: int = 0

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ProtocolError(f"chain depth must be >= 1, got {self.depth}")
        fixed = 1.0 if self.scheme.sensor_estimates else None
        for lower in range(1, self.depth + 1):
            self.links[lower] = LinkEstimator(
                lower - 1,
                lower,
                PrecisionMode.DOUBLE,
                fixed_ratio=fixed,
                reanchor_rounds=self.reanchor_rounds,
            )

    def link(self, upper: int, lower: int) -> LinkEstimator:
        if lower not in self.links or upper != lower - 1:
            raise ProtocolError(f"no link {upper}->{lower} in a chain of depth {self.depth}")
        return self.links[lower]

    def chain_ready(self, node_id: int) -> bool:
        return all(self.links[i].ready for i in range(1, node_id + 1))


def head_emit_beacon(head: HeadState, now_ticks: Ticks) -> BeaconRequest:
    """Open the next round with a beacon stamped at ``now_ticks``."""
    round_k = head.next_round
    head.next_round += 1
    head.beacon_log[round_k] = now_ticks
    return BeaconRequest(round_k=round_k, t1=now_ticks, hop_origin=HEAD_ID)


def sensor_on_beacon(state: SensorState, beacon: BeaconRequest, local_rx: Ticks) -> bool:
    """Record a beacon received at hardware time ``local_rx``.

    Returns:
        ``False`` if the round was already seen and the duplicate dropped.
    """
    if beacon.hop_origin != state.upper_node:
        raise ProtocolError(
            f"node {state.node_id} got a beacon from {beacon.hop_origin}, "
            f"expected its upper node {state.upper_node}"
        )
    if beacon.round_k in state.beacons:
        logger.debug("node %d dropped duplicate beacon for round %d", state.node_id, beacon.round_k)
        return False

    if state.zero_round is None:
        state.zero_round = beacon.round_k
        state.t1_zero = beacon.t1
        state.t2_zero = local_rx
        if state.scheme.sensor_estimates:
            state.logical = LogicalClockState.anchored_at(local_rx)
        logger.debug("node %d anchored at round %d (T2_0=%d)", state.node_id, beacon.round_k, local_rx)
    elif beacon.round_k > state.zero_round:
        state.t2_zero_acked = True

    if state.logical is not None and beacon.round_k > state.zero_round:
        assert state.t1_zero is not None and state.t2_zero is not None
        with charged_to(state.node_id):
            if state.logical_clock is LogicalClockMode.RECURSIVE:
                state.logical.commit(local_rx, state.precision)
            skew = cr_skew(state.t1_zero, state.t2_zero, beacon.t1, local_rx, state.precision)
            state.logical.set_ratio(fp_op("add", 1.0, skew, state.precision))
    t2 = state.stamp(local_rx)

    state.beacons[beacon.round_k] = (beacon.t1, t2)
    state.current_round = beacon.round_k
    return True


def sensor_on_measurement(
    state: SensorState, seq: int, local: Ticks, true_ref_time: float | None = None
) -> Measurement | None:
    """Timestamp and stage a measurement; ``None`` if the node is not yet synchronized."""
    if not state.synchronized:
        return None
    measurement = Measurement(seq=seq, t_m=state.stamp(local), true_ref_time=true_ref_time)
    state.staged.append(measurement)
    return measurement


def sensor_emit_report(state: SensorState, local_tx: Ticks) -> ReportResponse:
    """Build a report for the current round, transmitted at hardware time ``local_tx``.

    It takes at most one bundle of staged measurements and every relay
    waiting in the queue.

    Raises:
        ProtocolError: If the node has not heard a beacon yet.
    """
    if state.current_round is None:
        raise ProtocolError(f"node {state.node_id} has no synchronization round to respond to")
    round_k = state.current_round
    assert round_k is not None
    _, t2 = state.beacons[round_k]

    bundle = tuple(m.public() for m in state.staged[: state.bundle_size])
    del state.staged[: state.bundle_size]

    report = ReportResponse(
        origin=state.node_id,
        round_k=round_k,
        t2=t2,
        t3=state.stamp(local_tx),
        t2_zero=None if state.t2_zero_acked else state.t2_zero,
        zero_round=None if state.t2_zero_acked else state.zero_round,
        bundle=bundle,
    )
    for relay in state.relay_queue:
        report = gateway_forward(report, relay.incoming, relay.lower_sync, relay.lower_anchor)
    state.relay_queue.clear()
    state.responded.add(round_k)
    return report


def gateway_relay_beacon(state: SensorState, beacon: BeaconRequest, local_tx: Ticks) -> BeaconRequest:
    """Re-issue a received beacon to the child, stamped with this node's clock."""
    if state.child is None:
        raise ProtocolError(f"node {state.node_id} has no lower node to forward beacons to")
    t1 = state.stamp(local_tx)
    state.child_t1[beacon.round_k] = t1
    return BeaconRequest(round_k=beacon.round_k, t1=t1, hop_origin=state.node_id)


def gateway_on_report(state: SensorState, incoming: ReportResponse, local_rx: Ticks) -> SyncRecord:
    """Complete the lower link's round from a child's report and stage it for relay."""
    if incoming.origin != state.child:
        raise ProtocolError(f"node {state.node_id} got a report from unknown node {incoming.origin}")
    t1 = state.child_t1.get(incoming.round_k)
    if t1 is None:
        raise ProtocolError(
            f"node {state.node_id} never sent round {incoming.round_k} to node {incoming.origin}"
        )
    lower_sync = SyncRecord(
        round_k=incoming.round_k,
        upper_node=state.node_id,
        lower_node=incoming.origin,
        t1=t1,
        t2=incoming.t2,
        t3=incoming.t3,
        t4=state.stamp(local_rx),
    )
    lower_anchor = None
    if incoming.t2_zero is not None and incoming.zero_round is not None:
        lower_anchor = AnchorRecord(
            round_k=incoming.zero_round,
            upper_node=state.node_id,
            lower_node=incoming.origin,
            t1=state.child_t1[incoming.zero_round],
            t2=incoming.t2_zero,
        )
    state.relay_queue.append(_Relay(incoming, lower_sync, lower_anchor))
    state.child_reported.add(incoming.round_k)
    return lower_sync


def gateway_forward(
    own: ReportResponse,
    incoming: ReportResponse,
    lower_sync: SyncRecord,
    lower_anchor: AnchorRecord | None = None,
) -> ReportResponse:
    """Fold a lower node's report into the gateway's own outgoing report.

    Measurements pass through untouched; the lower link's timestamps are
    appended for the head to use.
    """
    anchors = own.relayed_anchors + incoming.relayed_anchors
    if lower_anchor is not None:
        anchors += (lower_anchor,)
    bundles = own.relayed_bundles + incoming.relayed_bundles
    if incoming.bundle:
        bundles += (RelayedBundle(incoming.origin, incoming.bundle),)
    return ReportResponse(
        origin=own.origin,
        round_k=own.round_k,
        t2=own.t2,
        t3=own.t3,
        t2_zero=own.t2_zero,
        zero_round=own.zero_round,
        bundle=own.bundle,
        relayed_sync=own.relayed_sync + incoming.relayed_sync + (lower_sync,),
        relayed_anchors=anchors,
        relayed_bundles=bundles,
    )


def head_on_report(
    head: HeadState, msg: ReportResponse, local_rx: Ticks
) -> list[tuple[int, Measurement, float]]:
    """Process a report from the head's direct child.

    Returns:
        ``(node_id, measurement, estimated reference seconds)`` for every
        measurement whose translation chain is complete. The rest wait in
        ``head.pending`` for a later report.

    Raises:
        ProtocolError: For an unknown origin or a first report without anchors.
    """
    with estimating(), charged_to(HEAD_ID):
        direct = head.link(HEAD_ID, msg.origin)
        if msg.t2_zero is not None and msg.zero_round is not None:
            direct.anchor(msg.zero_round, _beacon_t1(head, msg.zero_round), msg.t2_zero)
        if not direct.anchored:
            raise ProtocolError(f"report from node {msg.origin} arrived before its T2_0")

        direct.update(
            SyncRecord(
                round_k=msg.round_k,
                upper_node=HEAD_ID,
                lower_node=msg.origin,
                t1=_beacon_t1(head, msg.round_k),
                t2=msg.t2,
                t3=msg.t3,
                t4=local_rx,
            )
        )
        for anchor in msg.relayed_anchors:
            link = head.link(anchor.upper_node, anchor.lower_node)
            link.anchor(anchor.round_k, anchor.t1, anchor.t2)
        for rec in msg.relayed_sync:
            link = head.link(rec.upper_node, rec.lower_node)
            if link.anchored:
                link.update(rec)
            else:
                logger.debug(
                    "dropping round %d of unanchored link %d->%d",
                    rec.round_k, rec.upper_node, rec.lower_node,
                )

        head.pending.extend((msg.origin, m) for m in msg.bundle)
        for relayed in msg.relayed_bundles:
            if relayed.node_id not in head.links:
                raise ProtocolError(f"relayed measurements from unknown node {relayed.node_id}")
            head.pending.extend((relayed.node_id, m) for m in relayed.measurements)

        return _translate_pending(head)


def _beacon_t1(head: HeadState, round_k: int) -> Ticks:
    try:
        return head.beacon_log[round_k]
    except KeyError as e:
        raise ProtocolError(f"report refers to round {round_k}, which the head never started") from e


def _translate_pending(head: HeadState) -> list[tuple[int, Measurement, float]]:
    translated: list[tuple[int, Measurement, float]] = []
    waiting: list[tuple[int, Measurement]] = []
    for node_id, measurement in head.pending:
        if not head.chain_ready(node_id):
            waiting.append((node_id, measurement))
            continue
        chain = [head.links[i].state for i in range(1, node_id + 1)]
        try:
            estimate = translate_chain(measurement.t_m, chain)  # type: ignore[arg-type]
        except EstimationError as e:
            logger.warning(
                "node %d measurement %d not translatable: %s", node_id, measurement.seq, e
            )
            head.untranslatable += 1
            continue
        translated.append((node_id, measurement, estimate))
    head.pending = waiting
    return translated
