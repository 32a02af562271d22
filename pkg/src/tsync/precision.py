"""
Emulated limited-precision floating-point arithmetic.

Sensor motes do their clock arithmetic in IEEE 754 binary32. This module
reproduces that on a host with binary64 floats: values are rounded to the
nearest binary32 neighbour (ties to even) with numpy's ``float32`` and every
operation can be evaluated either natively or entirely in binary32.

Every ``fp_op`` call can be attributed to a node with ``charged_to`` and
counted with ``tally_fp_ops``; the simulator uses this to check that AHTS
sensors never do floating-point work.
"""

from __future__ import annotations

import math
import operator
from collections import Counter
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from enum import Enum
from typing import Literal

import numpy as np

from .errors import PrecisionError

FpOpName = Literal["add", "sub", "mul", "div"]

_OPS: dict[str, Callable[[float, float], float]] = {
    "add": operator.add,
    "sub": operator.sub,
    "mul": operator.mul,
    "div": operator.truediv,
}

_charged_node: ContextVar[int | None] = ContextVar("tsync_charged_node", default=None)
_active_tally: ContextVar["Counter[int | None] | None"] = ContextVar(
    "tsync_fp_tally", default=None
)


class PrecisionMode(str, Enum):
    """Arithmetic width a node evaluates its clock computations in."""

    SINGLE = "single"
    DOUBLE = "double"


@dataclass(frozen=True)
class PrecisionLoss:
    """Difference between a value and its binary32 representation."""

    epsilon: float


def round_single(x: float) -> float:
    """Round ``x`` to the nearest binary32 value and widen it back.

    Raises:
        PrecisionError: If ``x`` is not finite or overflows binary32.
    """
    if not math.isfinite(x):
        raise PrecisionError(f"cannot round non-finite value {x!r} to binary32")
    with np.errstate(over="ignore"):
        narrowed = np.float32(x)
    if not np.isfinite(narrowed):
        raise PrecisionError(f"{x!r} overflows the binary32 range")
    return float(narrowed)


def single_ulp(x: float) -> float:
    """Spacing between binary32 neighbours at ``x``."""
    return float(np.spacing(np.float32(abs(round_single(x)))))


def fp_op(op: FpOpName, a: float, b: float, mode: PrecisionMode) -> float:
    """Evaluate ``a op b`` at the given precision.

    In single mode both operands and the result are binary32, which is what a
    correctly rounded single-precision FPU (or soft-float library) returns.

    Raises:
        PrecisionError: On division by zero or a non-finite result.
    """
    if op not in _OPS:
        raise PrecisionError(f"unknown floating-point operation {op!r}")
    if not (math.isfinite(a) and math.isfinite(b)):
        raise PrecisionError(f"non-finite operand in {op}({a!r}, {b!r})")
    if op == "div" and b == 0:
        raise PrecisionError(f"division by zero: {a!r} / 0")

    tally = _active_tally.get()
    if tally is not None:
        tally[_charged_node.get()] += 1

    if mode is PrecisionMode.DOUBLE:
        result = float(_OPS[op](a, b))
    else:
        with np.errstate(all="ignore"):
            result = float(_OPS[op](np.float32(round_single(a)), np.float32(round_single(b))))

    if not math.isfinite(result):
        raise PrecisionError(f"{op}({a!r}, {b!r}) is not finite in {mode.value} precision")
    return result


def compute_precision_loss(ratio_full: float) -> PrecisionLoss:
    """Precision loss of storing a frequency ratio in binary32.

    The loss on the skew ``ratio - 1`` equals the loss on the ratio itself,
    since the constant 1 is exact in both formats.
    """
    if not ratio_full > 0:
        raise PrecisionError(f"frequency ratio must be positive, got {ratio_full!r}")
    return PrecisionLoss(epsilon=ratio_full - round_single(ratio_full))


@contextmanager
def charged_to(node_id: int) -> Iterator[None]:
    """Attribute every ``fp_op`` inside the block to ``node_id``."""
    token = _charged_node.set(node_id)
    try:
        yield
    finally:
        _charged_node.reset(token)


@contextmanager
def tally_fp_ops() -> Iterator["Counter[int | None]"]:
    """Count ``fp_op`` calls per charged node for the duration of the block.

    Operations outside any ``charged_to`` block are counted under ``None``.
    """
    tally: Counter[int | None] = Counter()
    token = _active_tally.set(tally)
    try:
        yield tally
    finally:
        _active_tally.reset(token)
