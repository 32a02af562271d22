"""
tsync-tools

Discrete-event simulation and estimation library for time synchronization in
multi-hop wireless sensor networks: sensor-side limited-precision
synchronization (EE-ASCFR) against head-side full-precision synchronization
(AHTS).
"""

__version__ = "0.1.0"

from .errors import TsyncError
from .precision import PrecisionMode
from .protocol import SchemeMode

__all__ = [
    "__version__",
    "PrecisionMode",
    "SchemeMode",
    "TsyncError",
]
