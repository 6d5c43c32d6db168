"""crcterm: discrete-time term-structure engine with consistent recalibration."""

__version__ = "0.1.0"

from crcterm.backend import BACKEND

__all__ = ["BACKEND", "__version__"]
