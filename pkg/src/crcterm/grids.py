"""Evaluation grids for characteristic surfaces.

A grid is a finite symmetric set of real Fourier arguments u (always
containing 0) plus designated purely imaginary pins such as +-i used for
bond and exponential-martingale checks.
"""

from dataclasses import dataclass, field

import numpy as np

from crcterm.errors import PinMissing

_TOL = 1e-12


@dataclass(frozen=True)
class UGrid:
    """Symmetric u-grid with imaginary evaluation pins (scalar arguments)."""

    real_points: np.ndarray
    imag_points: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.complex128))
    dim: int = 1

    def __post_init__(self):
        rp = np.asarray(self.real_points, dtype=np.float64)
        ip = np.asarray(self.imag_points, dtype=np.complex128)
        if rp.ndim != 1 or rp.size == 0:
            raise ValueError("real_points must be a non-empty 1-d array")
        if not np.any(np.abs(rp) < _TOL):
            raise ValueError("grid must contain u = 0")
        for u in rp:
            if not np.any(np.abs(rp + u) < _TOL):
                raise ValueError(f"grid not symmetric: missing -u for u={u}")
        if ip.size and np.max(np.abs(ip.real)) > _TOL:
            raise ValueError("imag_points must be purely imaginary")
        rp = np.sort(rp)
        rp.flags.writeable = False
        ip.flags.writeable = False
        object.__setattr__(self, "real_points", rp)
        object.__setattr__(self, "imag_points", ip)

    @property
    def n_real(self):
        return self.real_points.size

    @property
    def n_points(self):
        return self.real_points.size + self.imag_points.size

    @property
    def points(self):
        """All evaluation arguments as one complex vector, reals first."""
        return np.concatenate([
            self.real_points.astype(np.complex128), self.imag_points,
        ])

    @property
    def zero_index(self):
        return int(np.argmin(np.abs(self.real_points)))

    def pin_index(self, u):
        """Index of the argument u among self.points; PinMissing if absent."""
        idx = np.nonzero(np.abs(self.points - u) < _TOL)[0]
        if idx.size == 0:
            raise PinMissing(f"pin {u} not on grid")
        return int(idx[0])

    def has_pin(self, u):
        return bool(np.any(np.abs(self.points - u) < _TOL))

    @property
    def mirror_indices(self):
        """Index of -u for every real grid point (for Hermitian checks)."""
        rp = self.real_points
        out = np.empty(rp.size, dtype=np.int64)
        for i, u in enumerate(rp):
            out[i] = int(np.argmin(np.abs(rp + u)))
        return out

    @property
    def spacing(self):
        """Grid spacing if the real points are uniform, else None."""
        d = np.diff(self.real_points)
        if d.size and np.max(np.abs(d - d[0])) < 1e-9 * max(1.0, abs(d[0])):
            return float(d[0])
        return None


def make_grid(u_max, n_points, pins=(1j, -1j)):
    """Uniform symmetric grid on [-u_max, u_max] with n_points (odd)."""
    if n_points % 2 == 0:
        raise ValueError("n_points must be odd so that 0 is a grid point")
    rp = np.linspace(-u_max, u_max, n_points)
    rp[n_points // 2] = 0.0
    return UGrid(real_points=rp,
                 imag_points=np.asarray(pins, dtype=np.complex128))
