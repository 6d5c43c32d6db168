"""One-step affine model specifications.

All shipped models fit one shape: a state (X, Y) with X entering the
conditional exponent with a constant coefficient and Y carrying the flow,

    E[exp(u X_{t+1} + v Y_{t+1}) | F_t]
        = exp(F(u, v) + u X_t + (v + R_C(u, v)) Y_t).

The degenerate n = 0 case drops the X block and runs the flow on the state
itself (short-rate-as-state view); then the pins live in the v slot.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from crcterm import backend
from crcterm.errors import DomainExit

_RE_TOL = 1e-9


@dataclass(frozen=True)
class VasicekParams:
    """Gaussian mean-reverting model: Y' = Y + (b - a Y) + sigma * N(0,1)."""

    a: float
    b: float
    sigma: float

    model_name = "vasicek"

    def as_array(self):
        return np.array([self.a, self.b, self.sigma])

    @staticmethod
    def labels():
        return ("a", "b", "sigma")


@dataclass(frozen=True)
class HestonParams:
    """Square-root volatility model observed on a grid of step dt.

    a is the mean-reversion speed, b the long-run variance, c the volatility
    of volatility, rho the Brownian correlation. Feller: 2ab >= c^2.
    """

    a: float
    b: float
    c: float
    rho: float
    dt: float = 1.0 / 252.0
    substeps: int = 2

    model_name = "heston"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ValueError("heston parameters a, b, c must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if 2.0 * self.a * self.b < self.c * self.c:
            raise ValueError("Feller condition 2ab >= c^2 violated")
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("dt must be positive, substeps >= 1")

    def as_array(self):
        return np.array([self.a, self.b, self.c, self.rho])

    @staticmethod
    def labels():
        return ("a", "b", "c", "rho")


@dataclass(frozen=True)
class AffineModelSpec:
    """A one-step affine model with its flow, sampler and domain guard."""

    name: str
    n: int
    m: int
    params: object
    F: Callable                       # F(u, v) -> complex
    R_C: Callable                     # R_C(u, v) -> complex (m = 1)
    flow: Callable                    # flow(wu, wv, horizon) -> (phi, psi)
    one_step: Callable                # one_step(z, y, c0, normals) -> (z', y')
    admissible: Callable              # admissible(u, v) -> bool
    default_pin: complex              # extraction pin in the surface u-convention
    draws_per_step: int
    psi_domain: Optional[Callable] = None   # psi-array guard, None = entire

    def flow_pins(self, u):
        """Map surface arguments u to flow pins (wu, wv) = (iu, 0) or (0, iu)."""
        w = 1j * np.asarray(u, dtype=np.complex128)
        zero = np.zeros_like(w)
        if self.n >= 1:
            return w, zero
        return zero, w

    def check_entry(self, wu, wv):
        wu = np.atleast_1d(wu)
        wv = np.atleast_1d(wv)
        for a, b in zip(wu, wv):
            if not self.admissible(a, b):
                raise DomainExit(
                    f"{self.name}: pin (u={a}, v={b}) outside admissible domain")


def _vasicek_one_step(params, rate_is_state):
    a, b, s = params.a, params.b, params.sigma

    def one_step(z, y, c0, normals):
        n0 = normals[..., 0]
        y2 = y + (b - a * y) + s * n0
        if rate_is_state:
            return z, y2 + c0
        return z + y + c0, y2

    return one_step


def vasicek_model(params):
    """Integrated-rate view: X = cumulated short rate, Y = short rate."""
    a, b, s = params.a, params.b, params.sigma

    def F(u, v):
        return b * v + 0.5 * s * s * v * v

    def R_C(u, v):
        return u - a * v

    def flow(wu, wv, horizon):
        return backend.vasicek_flow(wu, wv, a, b, s, horizon)

    return AffineModelSpec(
        name="vasicek", n=1, m=1, params=params,
        F=F, R_C=R_C, flow=flow,
        one_step=_vasicek_one_step(params, rate_is_state=False),
        admissible=lambda u, v: True,
        default_pin=1j, draws_per_step=1,
    )


def vasicek_rate_model(params):
    """Short-rate-as-state view (no X block); pins sit in the flow slot."""
    a, b, s = params.a, params.b, params.sigma

    def F(u, v):
        return b * v + 0.5 * s * s * v * v

    def R_C(u, v):
        return -a * v

    def flow(wu, wv, horizon):
        # wu is unused by the fields in this view; pass 0 to the kernel.
        zero = np.zeros_like(np.asarray(wv, dtype=np.complex128))
        return backend.vasicek_flow(zero, wv, a, b, s, horizon)

    return AffineModelSpec(
        name="vasicek_rate", n=0, m=1, params=params,
        F=F, R_C=R_C, flow=flow,
        one_step=_vasicek_one_step(params, rate_is_state=True),
        admissible=lambda u, v: True,
        default_pin=1j, draws_per_step=1,
    )


def heston_model(params):
    """Log-price X and variance Y of the square-root model, step dt."""
    a, b, c, rho = params.a, params.b, params.c, params.rho
    dt, substeps = params.dt, params.substeps

    def flow(wu, wv, horizon):
        return backend.heston_flow(wu, wv, a, b, c, rho, dt, substeps, horizon)

    F_d, psi_d = heston_discrete_onestep(params)

    def R_C(u, v):
        return psi_d(u, v) - v

    def one_step(z, y, c0, normals):
        delta = dt / substeps
        sq_delta = math.sqrt(delta)
        rho_c = math.sqrt(max(0.0, 1.0 - rho * rho))
        z2 = np.asarray(z, dtype=np.float64) + 0.0
        y2 = np.asarray(y, dtype=np.float64) + 0.0
        for j in range(substeps):
            n1 = normals[..., 2 * j]
            n2 = normals[..., 2 * j + 1]
            yp = np.maximum(y2, 0.0)
            vol = np.sqrt(yp) * sq_delta
            z2 = z2 - 0.5 * yp * delta + vol * n1
            y2 = y2 + a * (b - yp) * delta + c * vol * (rho * n1 + rho_c * n2)
        return z2 + c0, y2

    def admissible(u, v):
        return (-_RE_TOL <= u.real <= 1.0 + _RE_TOL) and v.real <= _RE_TOL

    return AffineModelSpec(
        name="heston", n=1, m=1, params=params,
        F=F_d, R_C=R_C, flow=flow,
        one_step=one_step,
        admissible=admissible,
        default_pin=-1j, draws_per_step=2 * substeps,
        psi_domain=lambda psi: np.all(psi.real <= _RE_TOL),
    )


def heston_discrete_onestep(params):
    """One-step cumulant maps of the dt-sampled square-root model.

    Integrates the continuous Riccati system d(phi)/dtau = F(u, psi),
    d(psi)/dtau = R(u, psi) over [0, dt] with classical fourth-order steps
    and returns the discrete maps F_d(u, v) = phi(u, v, dt) and
    psi_d(u, v) = psi(u, v, dt). The discrete flow field is psi_d(u,v) - v.
    """
    a, b, c, rho = params.a, params.b, params.c, params.rho
    dt, substeps = params.dt, params.substeps

    def _maps(u, v):
        wu = np.atleast_1d(np.asarray(u, dtype=np.complex128))
        wv = np.atleast_1d(np.asarray(v, dtype=np.complex128)) * np.ones_like(wu)
        wu = wu * np.ones_like(wv)
        phi, psi = backend.heston_flow(wu.ravel(), wv.ravel(), a, b, c, rho,
                                       dt, substeps, 1)
        shape = np.broadcast(np.asarray(u), np.asarray(v)).shape
        if shape == ():
            return phi[0, 1], psi[0, 1]
        return phi[:, 1].reshape(shape), psi[:, 1].reshape(shape)

    def F_d(u, v):
        return _maps(u, v)[0]

    def psi_d(u, v):
        return _maps(u, v)[1]

    return F_d, psi_d


MODEL_FACTORIES = {
    "vasicek": (VasicekParams, vasicek_model),
    "vasicek_rate": (VasicekParams, vasicek_rate_model),
    "heston": (HestonParams, heston_model),
}


def build_model(params):
    """Instantiate the model a parameter vector belongs to."""
    if isinstance(params, HestonParams):
        return heston_model(params)
    if isinstance(params, VasicekParams):
        return vasicek_model(params)
    raise TypeError(f"unknown parameter vector type: {type(params)!r}")
