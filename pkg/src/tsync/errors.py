"""
Exception hierarchy for tsync-tools.

Library code raises these; the CLI catches them and reports them in red.
"""


class TsyncError(Exception):
    """Base class for every error raised by tsync."""


class ConfigError(TsyncError, ValueError):
    """A scenario or sweep configuration is invalid or unreadable."""


class ClockError(TsyncError, ValueError):
    """A clock was read out of order or produced an impossible value."""


class PrecisionError(TsyncError, ArithmeticError):
    """Emulated floating-point arithmetic failed (overflow, zero division)."""


class ProtocolError(TsyncError, RuntimeError):
    """A message arrived that the receiving role cannot accept."""


class EstimationError(TsyncError, ValueError):
    """An estimator was asked for a value it cannot produce."""


class WireError(TsyncError, ValueError):
    """A message could not be encoded or decoded."""


class MetricsError(TsyncError, ValueError):
    """An aggregate is undefined for the given samples."""


class OracleLeakError(TsyncError, RuntimeError):
    """Simulator ground truth was read from inside an estimator."""


class ResultsIOError(TsyncError, OSError):
    """Reading or writing a results file failed."""
