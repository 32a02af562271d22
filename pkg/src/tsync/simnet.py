"""
Deterministic discrete-event simulation of a synchronized sensor chain.

One global reference clock (the head's) drives a heap of events ordered by
``(fire_time, seq)``. Sensor hardware clocks are read-through views of that
clock. Every message is encoded to bytes at send time and decoded at
arrival, so nothing but wire fields crosses a link; ground truth stays in
the engine's oracle table.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .clockcore import ClockParams, HardwareClock, ReferenceTime, Ticks
from .config import DelayModel, ScenarioConfig
from .errors import ProtocolError
from .metrics import ErrorSample
from .precision import tally_fp_ops
from .protocol import (
    HEAD_ID,
    BeaconRequest,
    HeadState,
    ReportResponse,
    SensorState,
    gateway_on_report,
    gateway_relay_beacon,
    head_emit_beacon,
    head_on_report,
    sensor_emit_report,
    sensor_on_beacon,
    sensor_on_measurement,
)
from .wire import Message, decode, encode

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    BEACON_DUE = "beacon-due"
    MEASUREMENT_DUE = "measurement-due"
    MSG_ARRIVAL = "msg-arrival"
    DRIFT_UPDATE = "drift-update"
    REPORT_DUE = "report-due"


class ReportTrigger(str, Enum):
    """Why a REPORT_DUE event was scheduled."""

    READY = "ready"
    DEADLINE = "deadline"
    FLUSH = "flush"


@dataclass(order=True, frozen=True)
class Event:
    fire_time: ReferenceTime
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)


@dataclass(frozen=True)
class Topology:
    """A static chain: node 0 is the head, node ``i`` sits ``i`` hops below it."""

    depth: int
    propagation_seconds: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ProtocolError(f"chain depth must be >= 1, got {self.depth}")
        if len(self.propagation_seconds) != self.depth:
            raise ProtocolError(
                f"{len(self.propagation_seconds)} link delays for a chain of depth {self.depth}"
            )

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> Topology:
        return cls(
            depth=config.depth,
            propagation_seconds=tuple(config.propagation(i) for i in range(1, config.depth + 1)),
        )

    @property
    def nodes(self) -> range:
        return range(self.depth + 1)

    @property
    def sensors(self) -> range:
        return range(1, self.depth + 1)

    def upper(self, node: int) -> int:
        return node - 1

    def lower(self, node: int) -> int | None:
        return node + 1 if node < self.depth else None

    def hop(self, node: int) -> int:
        return node

    def link_propagation(self, a: int, b: int) -> float:
        return self.propagation_seconds[max(a, b) - 1]


@dataclass(frozen=True)
class MessageLogEntry:
    kind: str
    round_k: int
    src: int
    dst: int
    send_time: ReferenceTime
    recv_time: ReferenceTime | None
    size_bytes: int
    dropped: bool = False


@dataclass
class RunResult:
    """Everything a run produced, ground truth included."""

    config: ScenarioConfig
    samples: list[ErrorSample]
    messages: list[MessageLogEntry]
    fp_ops: dict[int | None, int]
    clock_params: dict[int, ClockParams]
    head_ratios: dict[int, float | None]
    sensor_ratios: dict[int, float]
    measurements: int
    undelivered: int

    def count(self, kind: str, include_dropped: bool = True) -> int:
        return sum(
            1 for m in self.messages if m.kind == kind and (include_dropped or not m.dropped)
        )


def sample_delay(
    model: DelayModel, rng: np.random.Generator, propagation: float | None = None
) -> float:
    """One-way latency: propagation plus transmit and receive interrupt delays.

    ``propagation`` overrides the model's value for a specific link.
    """
    base = model.propagation_seconds if propagation is None else propagation
    return base + model.interrupt_tx.sample(rng) + model.interrupt_rx.sample(rng)


class Simulation:
    """One run of a scenario. Instances are single-use."""

    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.topology = Topology.from_config(config)
        self.rounds = config.rounds

        clock_seed, drift_seed, delay_seed, loss_seed = np.random.SeedSequence(
            config.rng_seed
        ).spawn(4)
        self._delay_rng = np.random.default_rng(delay_seed)
        self._loss_rng = np.random.default_rng(loss_seed)

        if config.clocks is not None:
            params = [c.to_params() for c in config.clocks]
        else:
            params = config.clock_sampler.sample(np.random.default_rng(clock_seed), config.depth)
        self.clock_params = {HEAD_ID: ClockParams(), **dict(zip(self.topology.sensors, params))}
        drift_rngs = [np.random.default_rng(s) for s in drift_seed.spawn(config.depth)]
        self.clocks = {HEAD_ID: HardwareClock(self.clock_params[HEAD_ID])}
        for node, rng in zip(self.topology.sensors, drift_rngs):
            self.clocks[node] = HardwareClock(self.clock_params[node], rng)

        self.head = HeadState(config.scheme, config.depth, config.reanchor_rounds)
        self.sensors = {
            node: SensorState(
                node_id=node,
                upper_node=self.topology.upper(node),
                scheme=config.scheme,
                bundle_size=config.bundle_size,
                child=self.topology.lower(node),
                precision=config.sensor_precision,
                logical_clock=config.logical_clock,
            )
            for node in self.topology.sensors
        }

        self.now: ReferenceTime = 0.0
        self.samples: list[ErrorSample] = []
        self.messages: list[MessageLogEntry] = []
        self._queue: list[Event] = []
        self._seq = 0
        self._oracle: dict[tuple[int, int], ReferenceTime] = {}
        self._report_pending: set[int] = set()
        self._unsynchronized = 0
        self._measurements = 0
        self._ran = False

    @property
    def end_time(self) -> ReferenceTime:
        return self.rounds * self.config.si_seconds

    def schedule(self, fire_time: ReferenceTime, kind: EventKind, payload: Any = None) -> None:
        if fire_time < self.now:
            raise ProtocolError(f"{kind.value} scheduled at {fire_time!r} s, before now={self.now!r} s")
        self._seq += 1
        heapq.heappush(self._queue, Event(fire_time, self._seq, kind, payload))

    def run(self) -> RunResult:
        if self._ran:
            raise ProtocolError("a Simulation instance can only run once")
        self._ran = True
        cfg = self.config
        logger.info(
            "running %s: SI=%g s, %d rounds, depth %d, seed %d",
            cfg.scheme.value, cfg.si_seconds, self.rounds, cfg.depth, cfg.rng_seed,
        )

        self.schedule(0.0, EventKind.BEACON_DUE, (HEAD_ID, None))
        for node in self.topology.sensors:
            self.schedule(self._measurement_time(0), EventKind.MEASUREMENT_DUE, (node, 0))
            self.schedule(self.end_time, EventKind.REPORT_DUE, (node, None, ReportTrigger.FLUSH))
        if any(self.clocks[n].drifting for n in self.topology.sensors):
            self.schedule(cfg.drift_step_seconds, EventKind.DRIFT_UPDATE)

        handlers = {
            EventKind.BEACON_DUE: self._on_beacon_due,
            EventKind.MEASUREMENT_DUE: self._on_measurement_due,
            EventKind.MSG_ARRIVAL: self._on_arrival,
            EventKind.REPORT_DUE: self._on_report_due,
            EventKind.DRIFT_UPDATE: self._on_drift_update,
        }
        with tally_fp_ops() as tally:
            while self._queue:
                event = heapq.heappop(self._queue)
                self.now = event.fire_time
                handlers[event.kind](event.payload)

        undelivered = len(self._oracle) + self._unsynchronized
        if undelivered:
            logger.warning("%d of %d measurements were never estimated", undelivered, self._measurements)
        return RunResult(
            config=cfg,
            samples=self.samples,
            messages=self.messages,
            fp_ops=dict(tally),
            clock_params=self.clock_params,
            head_ratios={n: link.state.ratio_est if link.state else None for n, link in self.head.links.items()},
            sensor_ratios={n: s.ratio_est for n, s in self.sensors.items()},
            measurements=self._measurements,
            undelivered=undelivered,
        )

    def _read(self, node: int) -> Ticks:
        return self.clocks[node].read(self.now)

    def _measurement_time(self, index: int) -> ReferenceTime:
        per_round = self.config.measurement_rate
        k, j = divmod(index, per_round)
        si = self.config.si_seconds
        return k * si + (j + 0.5) * si / per_round

    def _send(self, src: int, dst: int, msg: Message) -> None:
        data = encode(msg)
        delay = sample_delay(
            self.config.delay, self._delay_rng, self.topology.link_propagation(src, dst)
        )
        p_loss = self.config.loss_probability
        dropped = p_loss > 0 and float(self._loss_rng.random()) < p_loss
        kind = "beacon" if isinstance(msg, BeaconRequest) else "report"
        entry = MessageLogEntry(
            kind=kind,
            round_k=msg.round_k,
            src=src,
            dst=dst,
            send_time=self.now,
            recv_time=None if dropped else self.now + delay,
            size_bytes=len(data),
            dropped=dropped,
        )
        self.messages.append(entry)
        logger.debug(
            "%s round %d %d->%d sent %.6f s recv %s (%d bytes)%s",
            kind, msg.round_k, src, dst, self.now,
            "-" if entry.recv_time is None else f"{entry.recv_time:.6f} s",
            len(data), " DROPPED" if dropped else "",
        )
        if not dropped:
            self.schedule(self.now + delay, EventKind.MSG_ARRIVAL, (dst, data))

    def _maybe_schedule_report(self, node: int) -> None:
        state = self.sensors[node]
        if node in self._report_pending or not state.ready_to_report():
            return
        self._report_pending.add(node)
        self.schedule(
            self.now + self.config.processing_delay_seconds,
            EventKind.REPORT_DUE,
            (node, state.current_round, ReportTrigger.READY),
        )

    def _emit_report(self, node: int) -> None:
        state = self.sensors[node]
        report = sensor_emit_report(state, self._read(node))
        self._send(node, state.upper_node, report)

    def _on_beacon_due(self, payload: tuple[int, BeaconRequest | None]) -> None:
        node, received = payload
        if node == HEAD_ID:
            beacon = head_emit_beacon(self.head, self._read(HEAD_ID))
            self._send(HEAD_ID, 1, beacon)
            if self.head.next_round < self.rounds:
                self.schedule(
                    self.head.next_round * self.config.si_seconds, EventKind.BEACON_DUE, (HEAD_ID, None)
                )
            return
        assert received is not None
        beacon = gateway_relay_beacon(self.sensors[node], received, self._read(node))
        self._send(node, beacon.hop_origin + 1, beacon)

    def _on_measurement_due(self, payload: tuple[int, int]) -> None:
        node, index = payload
        self._measurements += 1
        measurement = sensor_on_measurement(self.sensors[node], index, self._read(node), self.now)
        if measurement is None:
            self._unsynchronized += 1
        else:
            self._oracle[(node, index)] = self.now

        if index + 1 < self.rounds * self.config.measurement_rate:
            self.schedule(self._measurement_time(index + 1), EventKind.MEASUREMENT_DUE, (node, index + 1))
        self._maybe_schedule_report(node)

    def _on_arrival(self, payload: tuple[int, bytes]) -> None:
        dst, data = payload
        msg = decode(data)
        local = self._read(dst)

        if isinstance(msg, BeaconRequest):
            state = self.sensors[dst]
            if not sensor_on_beacon(state, msg, local):
                return
            if state.child is not None:
                self.schedule(
                    self.now + self.config.processing_delay_seconds,
                    EventKind.BEACON_DUE,
                    (dst, msg),
                )
            self.schedule(
                self.now + self.config.report_deadline_fraction * self.config.si_seconds,
                EventKind.REPORT_DUE,
                (dst, msg.round_k, ReportTrigger.DEADLINE),
            )
            self._maybe_schedule_report(dst)
            return

        assert isinstance(msg, ReportResponse)
        if dst == HEAD_ID:
            try:
                estimates = head_on_report(self.head, msg, local)
            except ProtocolError as e:
                # Only a lost first report can leave a link without anchors.
                if self.config.loss_probability == 0:
                    raise
                logger.warning("report %d from node %d discarded: %s", msg.round_k, msg.origin, e)
                return
            for node, measurement, estimate in estimates:
                truth = self._oracle.pop((node, measurement.seq))
                self.samples.append(
                    ErrorSample(
                        node_id=node,
                        hop=self.topology.hop(node),
                        event_ref_time=truth,
                        error=estimate - truth,
                        estimate=estimate,
                    )
                )
            return
        gateway_on_report(self.sensors[dst], msg, local)
        self._maybe_schedule_report(dst)

    def _on_report_due(self, payload: tuple[int, int | None, ReportTrigger]) -> None:
        node, round_k, trigger = payload
        state = self.sensors[node]
        if trigger is ReportTrigger.READY:
            self._report_pending.discard(node)
            # A beacon may have opened a new round during the processing delay.
            if state.ready_to_report():
                self._emit_report(node)
            self._maybe_schedule_report(node)
        elif trigger is ReportTrigger.DEADLINE:
            if round_k is None or state.current_round != round_k:
                return
            state.deadline_passed.add(round_k)
            self._maybe_schedule_report(node)
        else:
            while state.has_pending():
                logger.debug("node %d flushes round %s at the end of the run", node, state.current_round)
                self._emit_report(node)

    def _on_drift_update(self, payload: None) -> None:
        for node in self.topology.sensors:
            self.clocks[node].advance(self.now)
        next_time = self.now + self.config.drift_step_seconds
        if next_time < self.end_time:
            self.schedule(next_time, EventKind.DRIFT_UPDATE)


def run(config: ScenarioConfig) -> RunResult:
    """Simulate one scenario from scratch."""
    return Simulation(config).run()
