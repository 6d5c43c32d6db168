"""Equivalence of the compiled and pure-numpy kernel backends."""

import numpy as np
import pytest

from crcterm.backend import _corepy

try:
    from crcterm.backend import _core
    HAVE_CORE = True
except ImportError:
    HAVE_CORE = False

needs_core = pytest.mark.skipif(not HAVE_CORE,
                                reason="compiled backend not built")


@needs_core
def test_vasicek_flow_backends_agree(rng):
    wu = rng.normal(size=12) + 1j * rng.normal(size=12)
    wv = rng.normal(size=12) + 1j * rng.normal(size=12)
    p1, s1 = _core.vasicek_flow(wu, wv, 0.3, 0.01, 0.2, 25)
    p2, s2 = _corepy.vasicek_flow(wu, wv, 0.3, 0.01, 0.2, 25)
    assert np.max(np.abs(p1 - p2)) < 1e-13
    assert np.max(np.abs(s1 - s2)) < 1e-13


@needs_core
def test_heston_flow_backends_agree(rng):
    wu = 1j * rng.normal(size=9)
    wv = np.zeros(9, dtype=complex)
    args = (2.0, 0.04, 0.3, -0.7, 1 / 252, 2, 30)
    p1, s1 = _core.heston_flow(wu, wv, *args)
    p2, s2 = _corepy.heston_flow(wu, wv, *args)
    assert np.max(np.abs(p1 - p2)) < 1e-13
    assert np.max(np.abs(s1 - s2)) < 1e-13


@needs_core
def test_surface_step_backends_agree(rng):
    N, G, H, P = 7, 5, 9, 2
    theta = rng.normal(size=(N, G, H)) + 1j * rng.normal(size=(N, G, H))
    tabs = [rng.normal(size=(P, G, H - 1)) + 1j * rng.normal(size=(P, G, H - 1))
            for _ in range(3)]
    sidx = rng.integers(0, P, size=N)
    y = rng.normal(size=N)
    dy = rng.normal(size=N)
    o1 = _core.crc_surface_step(theta, *tabs, sidx, y, dy)
    o2 = _corepy.crc_surface_step(theta, *tabs, sidx, y, dy)
    assert np.max(np.abs(o1 - o2)) < 1e-14


@needs_core
def test_flow_errors_match(rng):
    from crcterm.errors import OdeStepError, Overflow
    wu = np.array([0j])
    wv = np.array([1.0 + 0j])
    for mod in (_core, _corepy):
        with pytest.raises(Overflow):
            mod.vasicek_flow(wu, wv, -1.0, 0.5, 1.0, 60)
    # blow-up detection: push the square-root flow outside its domain
    for mod in (_core, _corepy):
        with pytest.raises(OdeStepError):
            mod.heston_flow(np.array([40.0 + 0j]), np.array([30.0 + 0j]),
                            0.1, 40.0, 6.0, 0.9, 1.0, 1, 60)
