"""Pure-numpy implementations of the hot kernels.

This module mirrors the compiled extension ``_core`` exactly; the dispatcher
in ``crcterm.backend`` picks whichever is available. Keep the signatures and
numerical semantics of both modules in lockstep -- the backend equivalence
test compares them elementwise.
"""

import numpy as np

from crcterm.errors import OdeStepError, Overflow

PHI_BOUND = 1e8
PSI_BOUND = 1e8


def vasicek_flow(wu, wv, a, b, sigma, horizon):
    """Riccati difference flow for the Gaussian mean-reverting model.

    One-step fields F(u,v) = b v + sigma^2 v^2 / 2 and R(u,v) = u - a v,
    iterated forward: psi[k+1] = psi[k] + R(wu, psi[k]),
    phi[k+1] = phi[k] + F(wu, psi[k]).

    Args:
        wu: complex array (G,), pins for the constant-coefficient block.
        wv: complex array (G,), initial values of the flowing block.
        horizon: number of steps; output arrays have horizon+1 columns.

    Returns:
        (phi, psi) complex arrays of shape (G, horizon+1).
    """
    wu = np.asarray(wu, dtype=np.complex128)
    wv = np.asarray(wv, dtype=np.complex128)
    G = wu.shape[0]
    phi = np.zeros((G, horizon + 1), dtype=np.complex128)
    psi = np.zeros((G, horizon + 1), dtype=np.complex128)
    psi[:, 0] = wv
    half_s2 = 0.5 * sigma * sigma
    for k in range(horizon):
        p = psi[:, k]
        phi[:, k + 1] = phi[:, k] + b * p + half_s2 * p * p
        psi[:, k + 1] = p + (wu - a * p)
    if horizon > 0 and np.max(np.abs(phi[:, horizon])) > PHI_BOUND:
        raise Overflow("vasicek flow: |phi| exceeded bound")
    return phi, psi


def heston_flow(wu, wv, a, b, c, rho, dt, substeps, horizon):
    """Riccati flow of the square-root volatility model, one RK4 map per step.

    Continuous fields F(u,v) = a b v and
    R(u,v) = (u^2 - u)/2 + c^2 v^2 / 2 + c rho u v - a v are integrated over
    [0, dt] with ``substeps`` classical fourth-order steps; the discrete flow
    iterates that one-step map ``horizon`` times.

    Returns:
        (phi, psi) complex arrays of shape (G, horizon+1).
    """
    wu = np.asarray(wu, dtype=np.complex128)
    wv = np.asarray(wv, dtype=np.complex128)
    G = wu.shape[0]
    phi = np.zeros((G, horizon + 1), dtype=np.complex128)
    psi = np.zeros((G, horizon + 1), dtype=np.complex128)
    psi[:, 0] = wv
    h = dt / substeps
    half_c2 = 0.5 * c * c
    u_part = 0.5 * (wu * wu - wu)
    crho_u = c * rho * wu
    ab = a * b

    def rfield(v):
        return u_part + half_c2 * v * v + crho_u * v - a * v

    p = wv.astype(np.complex128).copy()
    f = np.zeros(G, dtype=np.complex128)
    for k in range(horizon):
        for _ in range(substeps):
            k1 = rfield(p)
            p2 = p + 0.5 * h * k1
            k2 = rfield(p2)
            p3 = p + 0.5 * h * k2
            k3 = rfield(p3)
            p4 = p + h * k3
            k4 = rfield(p4)
            f = f + (h / 6.0) * ab * (p + 2.0 * p2 + 2.0 * p3 + p4)
            p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(p.view(np.float64))):
            raise OdeStepError("heston flow: non-finite psi at step %d" % k)
        if np.max(np.abs(p)) > PSI_BOUND:
            raise OdeStepError("heston flow: |psi| blow-up at step %d" % k)
        psi[:, k + 1] = p
        phi[:, k + 1] = f
    if horizon > 0 and np.max(np.abs(phi[:, horizon])) > PHI_BOUND:
        raise Overflow("heston flow: |phi| exceeded bound")
    return phi, psi


def crc_surface_step(theta, alpha_tab, beta_tab, sigma_tab, state_idx, y, dy):
    """One recalibration update of a batch of surfaces.

    out[n,g,x] = theta[n,g,x+1] + alpha_tab[s,g,x] + beta_tab[s,g,x]*y[n]
                 + sigma_tab[s,g,x]*dy[n]         with s = state_idx[n].

    The tables hold, per parameter state s, the second differences of the
    flows (alpha_tab = -d2 phi, beta_tab = -d2 psi) and the first differences
    (sigma_tab = d1 psi), each of shape (P, G, >= H-1).

    Args:
        theta: complex array (N, G, H), current surfaces.
        state_idx: int64 array (N,), parameter-state index per path.
        y, dy: float arrays (N,), current factor level and its increment.

    Returns:
        complex array (N, G, H-1), updated surfaces.
    """
    N, G, H = theta.shape
    Hm1 = H - 1
    s = np.asarray(state_idx)
    out = theta[:, :, 1:].copy()
    out += alpha_tab[s, :, :Hm1]
    out += beta_tab[s, :, :Hm1] * y[:, None, None]
    out += sigma_tab[s, :, :Hm1] * dy[:, None, None]
    return out
