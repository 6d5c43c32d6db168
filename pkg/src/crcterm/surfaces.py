"""Forward-characteristic surfaces on finite grids (Musiela parametrized).

A surface holds one complex value theta(u, x) per grid argument u and
time-to-maturity x = 0..horizon-1. Surfaces are immutable snapshots; every
operation returns a new surface.
"""

from dataclasses import dataclass

import numpy as np

from crcterm.errors import HorizonExhausted
from crcterm.grids import UGrid

ZERO_TOL = 1e-10
HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class CharSurface:
    """theta(u, x) on (grid points) x (maturities 0..horizon-1)."""

    grid: UGrid
    values: np.ndarray
    time_stamp: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[0] != self.grid.n_points:
            raise ValueError("values must have shape (grid.n_points, horizon)")
        if v.shape[1] < 1:
            raise ValueError("surface needs at least one maturity")
        z = self.grid.zero_index
        if np.max(np.abs(v[z, :]), initial=0.0) > ZERO_TOL:
            raise ValueError("theta(0, x) must vanish for all x")
        v[z, :] = 0.0
        mirror = self.grid.mirror_indices
        herm = np.max(np.abs(v[mirror, :] - np.conj(v[: self.grid.n_real, :])))
        if herm > HERMITIAN_TOL:
            raise ValueError(
                f"Hermitian symmetry violated on real grid (max dev {herm:g})")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def horizon(self):
        return self.values.shape[1]

    def pin_values(self, u):
        """Values theta(u, .) for a single grid argument u."""
        return self.values[self.grid.pin_index(u), :]

    def with_values(self, values, time_stamp=None):
        ts = self.time_stamp if time_stamp is None else time_stamp
        return CharSurface(grid=self.grid, values=values, time_stamp=ts)


def shift(theta):
    """Drop the shortest maturity: out(u, x) = in(u, x+1); horizon - 1.

    Raises HorizonExhausted when only one maturity is left (shift never
    extrapolates).
    """
    if theta.horizon < 2:
        raise HorizonExhausted("cannot shift a surface with horizon 1")
    return CharSurface(grid=theta.grid,
                       values=theta.values[:, 1:].copy(),
                       time_stamp=theta.time_stamp + 1)


def cumulate(theta, t):
    """Sum of the first t maturities per grid point; t = 0 gives zeros.

    cumulate(theta, t)[g] is the log of the conditional characteristic
    function of the increment over t periods, evaluated at grid point g.
    """
    if t < 0 or t > theta.horizon:
        raise ValueError(f"t must lie in [0, horizon={theta.horizon}]")
    return theta.values[:, :t].sum(axis=1)


def combine(base, scale_and_surfaces, time_stamp=None):
    """Linear combination base + sum(scale * surface) on a shared grid."""
    acc = base.values.copy()
    for s, srf in scale_and_surfaces:
        if srf.grid is not base.grid and srf.grid.n_points != base.grid.n_points:
            raise ValueError("surfaces must share one grid")
        acc += s * srf.values[:, : acc.shape[1]]
    return base.with_values(acc, time_stamp=time_stamp)
