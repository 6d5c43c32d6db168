"""Riccati difference flows and the surfaces they generate."""

from dataclasses import dataclass

import numpy as np

from crcterm.errors import DomainExit
from crcterm.surfaces import CharSurface

_FLOW_CACHE = {}
_FLOW_CACHE_MAX = 64


@dataclass(frozen=True)
class RiccatiFlow:
    """phi(u,v,k), psi(u,v,k) for k = 0..horizon at a set of pins."""

    u: np.ndarray          # (G,) complex pins, constant block
    v: np.ndarray          # (G,) complex pins, flowing block
    phi: np.ndarray        # (G, horizon+1) complex
    psi: np.ndarray        # (G, horizon+1) complex
    model: object

    @property
    def horizon(self):
        return self.phi.shape[1] - 1


def riccati_flow(model, u, v, horizon, via_fields=False):
    """Forward Riccati recursion at pins (u, v) up to the horizon.

    psi(k+1) = psi(k) + R_C(u, psi(k)), phi(k+1) = phi(k) + F(u, psi(k)),
    with phi(0) = 0 and psi(0) = v. ``via_fields`` forces the step-by-step
    field evaluation instead of the model's fused flow kernel (the two are
    numerically identical; the slow route exists as a cross-check).

    Raises:
        DomainExit: pins outside the admissible domain, or psi leaves it.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    u = np.atleast_1d(np.asarray(u, dtype=np.complex128))
    v = np.atleast_1d(np.asarray(v, dtype=np.complex128))
    u, v = np.broadcast_arrays(u, v)
    u = np.ascontiguousarray(u)
    v = np.ascontiguousarray(v)
    model.check_entry(u, v)
    if via_fields:
        G = u.shape[0]
        phi = np.zeros((G, horizon + 1), dtype=np.complex128)
        psi = np.zeros((G, horizon + 1), dtype=np.complex128)
        psi[:, 0] = v
        for k in range(horizon):
            p = psi[:, k]
            phi[:, k + 1] = phi[:, k] + model.F(u, p)
            psi[:, k + 1] = p + model.R_C(u, p)
    else:
        phi, psi = model.flow(u, v, horizon)
    if model.psi_domain is not None and not model.psi_domain(psi):
        raise DomainExit(f"{model.name}: psi left the admissible domain")
    return RiccatiFlow(u=u, v=v, phi=phi, psi=psi, model=model)


def vasicek_closed_form(params, u, s, t):
    """Closed-form (phi, psi) of the short-rate-as-state view.

    psi = (1-a)^(t-s) u and
    phi = sum_{k=s}^{t-1} [ b (1-a)^(t-1-k) u + sigma^2 (1-a)^(2(t-1-k)) u^2 / 2 ].
    """
    if t < s:
        raise ValueError("need t >= s")
    a, b, sig = params.a, params.b, params.sigma
    u = np.asarray(u, dtype=np.complex128)
    nsteps = t - s
    q = 1.0 - a
    powers = q ** np.arange(nsteps)
    psi = (q ** nsteps) * u
    phi = b * u * powers.sum() + 0.5 * sig * sig * u * u * (powers * powers).sum()
    return phi, psi


def semiflow_residual(flow, r, s, t):
    """Flow-composition residuals over r <= s <= t (time-homogeneous form).

    Restarts the flow from the transported pin psi(u, v, t-s) for s-r steps
    and compares against the direct t-r step flow:
        psi_res = max |psi(u, psi(u,v,t-s), s-r) - psi(u,v,t-r)|
        phi_res = max |phi(u,v,t-s) + phi(u, psi(u,v,t-s), s-r) - phi(u,v,t-r)|
    """
    if not 0 <= r <= s <= t <= flow.horizon:
        raise ValueError("need 0 <= r <= s <= t <= horizon")
    mid = flow.psi[:, t - s]
    restart = riccati_flow(flow.model, flow.u, mid, s - r)
    psi_res = float(np.max(np.abs(restart.psi[:, s - r] - flow.psi[:, t - r])))
    phi_res = float(np.max(np.abs(
        flow.phi[:, t - s] + restart.phi[:, s - r] - flow.phi[:, t - r])))
    return psi_res, phi_res


def flow_for_grid(model, grid, horizon):
    """Cached (phi, psi) arrays at the grid's pins, shape (n_points, horizon+1)."""
    key = (model.name, model.params, grid.points.tobytes(), horizon)
    hit = _FLOW_CACHE.get(key)
    if hit is not None:
        return hit
    wu, wv = model.flow_pins(grid.points)
    flow = riccati_flow(model, wu, wv, horizon)
    if len(_FLOW_CACHE) >= _FLOW_CACHE_MAX:
        _FLOW_CACHE.clear()
    _FLOW_CACHE[key] = (flow.phi, flow.psi)
    return flow.phi, flow.psi


def affine_forward_surface(model, y, grid, horizon, time_stamp=0):
    """Forward-characteristic surface of the model at factor level y.

    theta(u, x) = [phi(iu, x+1) - phi(iu, x)] + [psi(iu, x+1) - psi(iu, x)] y,
    with the pin placed in the flow slot appropriate for the model shape.
    """
    phi, psi = flow_for_grid(model, grid, horizon)
    values = np.diff(phi, axis=1) + np.diff(psi, axis=1) * float(y)
    return CharSurface(grid=grid, values=values, time_stamp=time_stamp)
