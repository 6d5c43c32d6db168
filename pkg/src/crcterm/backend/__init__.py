"""Kernel backend selection.

The compiled extension is preferred when present; the numpy implementation
is the fallback. Set CRCTERM_PURE_PYTHON=1 to force the fallback (used by
the backend-equivalence tests and the benchmark).
"""

import os

_force_py = os.environ.get("CRCTERM_PURE_PYTHON", "").strip().lower() in (
    "1", "true", "yes", "on",
)

if _force_py:
    from crcterm.backend import _corepy as _impl
    BACKEND = "python"
else:
    try:
        from crcterm.backend import _core as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        from crcterm.backend import _corepy as _impl
        BACKEND = "python"

vasicek_flow = _impl.vasicek_flow
heston_flow = _impl.heston_flow
crc_surface_step = _impl.crc_surface_step

__all__ = ["BACKEND", "vasicek_flow", "heston_flow", "crc_surface_step"]
