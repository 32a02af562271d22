"""
Little-endian binary encoding of protocol messages.

Every message starts with the same header::

    u8  message type (1 = beacon, 2 = report)
    u16 origin node id
    u32 round

Beacon body::

    u64 t1

Report body, in order::

    u8  flags (bit 0: T2_0 present)
    u64 t2
    u64 t3
    [u32 zero_round, u64 t2_zero]                      if flag bit 0
    u16 n, n x (u32 seq, u64 t_m)                      own bundle
    u16 n, n x (u32 round, u16 upper, u16 lower,
                u64 t1, u64 t2, u64 t3, u64 t4)        relayed sync records
    u16 n, n x (u32 round, u16 upper, u16 lower,
                u64 t1, u64 t2)                        relayed anchors
    u16 n, n x (u16 node, u16 m, m x (u32 seq, u64 t_m))  relayed bundles

Ground truth carried by ``Measurement`` is never encoded.
"""

from __future__ import annotations

import struct
from typing import Union

from .errors import WireError
from .protocol import (
    AnchorRecord,
    BeaconRequest,
    Measurement,
    RelayedBundle,
    ReportResponse,
    SyncRecord,
)

Message = Union[BeaconRequest, ReportResponse]

BEACON_TYPE = 1
REPORT_TYPE = 2
_HAS_T2_ZERO = 0x01

_HEADER = struct.Struct("<BHI")
_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_TIMES = struct.Struct("<QQ")
_ZERO = struct.Struct("<IQ")
_MEASUREMENT = struct.Struct("<IQ")
_SYNC = struct.Struct("<IHHQQQQ")
_ANCHOR = struct.Struct("<IHHQQ")
_BUNDLE_HEAD = struct.Struct("<HH")


def _pack(fmt: struct.Struct, *values: int) -> bytes:
    try:
        return fmt.pack(*values)
    except struct.error as e:
        raise WireError(f"value out of range for {fmt.format!r}: {values}") from e


def _pack_count(items: tuple[object, ...]) -> bytes:
    return _pack(_U16, len(items))


def _pack_measurements(measurements: tuple[Measurement, ...]) -> bytes:
    return b"".join(_pack(_MEASUREMENT, m.seq, m.t_m) for m in measurements)


def encode(msg: Message) -> bytes:
    """Serialize a beacon or report.

    Raises:
        WireError: If a field does not fit its wire width (negative ticks,
            node ids above 65535, more than 65535 entries).
    """
    if isinstance(msg, BeaconRequest):
        return _pack(_HEADER, BEACON_TYPE, msg.hop_origin, msg.round_k) + _pack(_U64, msg.t1)
    if not isinstance(msg, ReportResponse):
        raise WireError(f"cannot encode {type(msg).__name__}")

    has_zero = msg.t2_zero is not None and msg.zero_round is not None
    parts = [
        _pack(_HEADER, REPORT_TYPE, msg.origin, msg.round_k),
        _pack(_U8, _HAS_T2_ZERO if has_zero else 0),
        _pack(_TIMES, msg.t2, msg.t3),
    ]
    if has_zero:
        parts.append(_pack(_ZERO, msg.zero_round, msg.t2_zero))  # type: ignore[arg-type]

    parts += [_pack_count(msg.bundle), _pack_measurements(msg.bundle)]

    parts.append(_pack_count(msg.relayed_sync))
    for rec in msg.relayed_sync:
        parts.append(
            _pack(_SYNC, rec.round_k, rec.upper_node, rec.lower_node, rec.t1, rec.t2, rec.t3, rec.t4)
        )

    parts.append(_pack_count(msg.relayed_anchors))
    for anchor in msg.relayed_anchors:
        parts.append(
            _pack(_ANCHOR, anchor.round_k, anchor.upper_node, anchor.lower_node, anchor.t1, anchor.t2)
        )

    parts.append(_pack_count(msg.relayed_bundles))
    for relayed in msg.relayed_bundles:
        parts.append(_pack(_BUNDLE_HEAD, relayed.node_id, len(relayed.measurements)))
        parts.append(_pack_measurements(relayed.measurements))

    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, fmt: struct.Struct) -> tuple[int, ...]:
        try:
            values = fmt.unpack_from(self.data, self.pos)
        except struct.error as e:
            raise WireError(f"message truncated at byte {self.pos} of {len(self.data)}") from e
        self.pos += fmt.size
        return values

    def take_one(self, fmt: struct.Struct) -> int:
        return self.take(fmt)[0]

    def measurements(self, count: int) -> tuple[Measurement, ...]:
        return tuple(Measurement(*self.take(_MEASUREMENT)) for _ in range(count))

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise WireError(f"{len(self.data) - self.pos} trailing bytes after message")


def decode(data: bytes) -> Message:
    """Parse bytes produced by ``encode``.

    Raises:
        WireError: On an unknown type byte, truncation or trailing bytes.
    """
    reader = _Reader(data)
    kind, origin, round_k = reader.take(_HEADER)

    if kind == BEACON_TYPE:
        beacon = BeaconRequest(round_k=round_k, t1=reader.take_one(_U64), hop_origin=origin)
        reader.finish()
        return beacon
    if kind != REPORT_TYPE:
        raise WireError(f"unknown message type {kind}")

    flags = reader.take_one(_U8)
    t2, t3 = reader.take(_TIMES)
    zero_round = t2_zero = None
    if flags & _HAS_T2_ZERO:
        zero_round, t2_zero = reader.take(_ZERO)

    bundle = reader.measurements(reader.take_one(_U16))
    relayed_sync = tuple(SyncRecord(*reader.take(_SYNC)) for _ in range(reader.take_one(_U16)))
    relayed_anchors = tuple(
        AnchorRecord(*reader.take(_ANCHOR)) for _ in range(reader.take_one(_U16))
    )
    relayed_bundles = []
    for _ in range(reader.take_one(_U16)):
        node_id, count = reader.take(_BUNDLE_HEAD)
        relayed_bundles.append(RelayedBundle(node_id, reader.measurements(count)))
    reader.finish()

    return ReportResponse(
        origin=origin,
        round_k=round_k,
        t2=t2,
        t3=t3,
        t2_zero=t2_zero,
        zero_round=zero_round,
        bundle=bundle,
        relayed_sync=relayed_sync,
        relayed_anchors=relayed_anchors,
        relayed_bundles=tuple(relayed_bundles),
    )
