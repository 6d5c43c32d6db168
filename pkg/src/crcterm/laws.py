"""Increment laws, branch-tracked logarithms and process characteristics."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from crcterm.errors import BranchJump, Unsupported, ZeroValue

_ANCHOR_TOL = 1e-9


def continuous_log(f_values):
    """Branch-tracked complex log along a path anchored at f[0] = 1.

    The phase is unwrapped by accumulating the principal argument of
    consecutive ratios, so exp(result) reproduces the input exactly and the
    imaginary part is continuous along the path.

    Raises:
        ZeroValue: some |f| is 0.
        BranchJump: a consecutive phase step reaches pi (grid too coarse).
    """
    f = np.asarray(f_values, dtype=np.complex128)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("need a 1-d non-empty path of values")
    if abs(f[0] - 1.0) > _ANCHOR_TOL:
        raise ValueError("path must be anchored at f[0] = 1")
    if np.any(np.abs(f) == 0.0):
        raise ZeroValue("characteristic function vanishes on the path")
    dphase = np.angle(f[1:] / f[:-1])
    if dphase.size and np.max(np.abs(dphase)) >= np.pi * (1.0 - 1e-12):
        raise BranchJump("phase step >= pi between consecutive path points")
    phase = np.concatenate([[0.0], np.cumsum(dphase)])
    out = np.log(np.abs(f)) + 1j * phase
    out[0] = np.log(np.abs(f[0]))  # anchor: exactly real
    return out


@dataclass(frozen=True)
class IncrementLaw:
    """One-period increment law of a driving process.

    Exactly one evaluation route must be usable for characteristic work:
    a closed-form cumulant (u -> log E[exp(i u . delta)], complex u allowed)
    or a finite-state atom table. A sampler may be attached for Monte Carlo
    regardless.
    """

    cumulant: Optional[Callable] = None
    atoms: Optional[tuple] = None        # (values (K,) or (K,d), probs (K,))
    sampler: Optional[Callable] = None   # sampler(rng, size) -> draws
    kind: str = "continuous"             # "finite" | "continuous"

    def char_values(self, u):
        """E[exp(i u . delta)] for scalar (array of) argument(s) u."""
        if self.atoms is None:
            raise Unsupported("law has no finite-state enumeration")
        values, probs = self.atoms
        values = np.asarray(values, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        u = np.asarray(u, dtype=np.complex128)
        if values.ndim == 1:
            ph = np.multiply.outer(u, values)
        else:
            ph = np.tensordot(u, values, axes=([-1], [-1]))
        return np.exp(1j * ph) @ probs

    def cumulant_at(self, u):
        if self.cumulant is not None:
            return self.cumulant(u)
        if self.atoms is not None:
            return np.log(self.char_values(u))
        raise Unsupported("law is sampler-only; no cumulant available")


def log_char_on_grid(char_values, grid):
    """Branch-tracked log of characteristic values given on grid.points.

    Real arguments are unwrapped outward from u = 0 along the sorted grid;
    imaginary pins must carry positive real values (they are expectations of
    positive quantities) and take the principal log.
    """
    char_values = np.asarray(char_values, dtype=np.complex128)
    out = np.empty(char_values.size, dtype=np.complex128)
    z = grid.zero_index
    right = continuous_log(char_values[z : grid.n_real])
    left = continuous_log(char_values[z::-1])
    out[z : grid.n_real] = right
    out[:z] = left[::-1][:-1]
    if grid.imag_points.size:
        vals = char_values[grid.n_real :]
        if np.any(vals.real <= 0) or np.any(
                np.abs(vals.imag) > 1e-9 * np.abs(vals.real)):
            raise ValueError(
                "imaginary-pin characteristic values must be positive real")
        out[grid.n_real :] = np.log(vals.real)
    return out


def process_characteristic(law, grid):
    """One-step cumulant kappa(u) on every grid argument.

    Closed-form cumulants are evaluated directly. Finite-state laws are
    enumerated exactly and logged with the branch tracked outward from u=0
    along the real grid; imaginary pins have positive real characteristic
    values and take the principal log.

    Raises:
        Unsupported: the law is sampler-only.
    """
    pts = grid.points
    if law.cumulant is not None:
        out = np.asarray([law.cumulant(u) for u in pts], dtype=np.complex128)
        z = grid.zero_index
        if abs(out[z]) > 1e-10:
            raise ValueError("cumulant does not vanish at u = 0")
        out[z] = 0.0
        return out
    if law.atoms is None:
        raise Unsupported("sampler-only laws are handled by Monte Carlo checks")
    return log_char_on_grid(law.char_values(pts), grid)


def iid_surface(law, grid, horizon, time_stamp=0):
    """Surface of an i.i.d.-increment process: theta(u, x) = kappa(u) per x."""
    from crcterm.surfaces import CharSurface

    kappa = process_characteristic(law, grid)
    values = np.tile(kappa[:, None], (1, horizon))
    return CharSurface(grid=grid, values=values, time_stamp=time_stamp)


@dataclass(frozen=True)
class DecompositionTriple:
    """(alpha, sigma^1..sigma^d, law of the driving increments).

    The surfaces are indexed by maturity offset j = t - s with the j = 0 row
    identically zero (the normalization row that never enters the update).
    """

    alpha: "CharSurface"
    sigmas: list
    epsilon_law: IncrementLaw
    locally_independent: bool = False

    @property
    def d(self):
        return len(self.sigmas)
