# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics mirror ``_corepy`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

from crcterm.errors import OdeStepError, Overflow

cnp.import_array()

DEF PHI_BOUND = 1e8
DEF PSI_BOUND = 1e8


cdef inline double cabs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


def vasicek_flow(wu, wv, double a, double b, double sigma, int horizon):
    """See crcterm.backend._corepy.vasicek_flow."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] wu_a = np.ascontiguousarray(wu, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] wv_a = np.ascontiguousarray(wv, dtype=np.complex128)
    cdef Py_ssize_t G = wu_a.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] phi = np.zeros((G, horizon + 1), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] psi = np.zeros((G, horizon + 1), dtype=np.complex128)
    cdef double half_s2 = 0.5 * sigma * sigma
    cdef Py_ssize_t g, k
    cdef double complex p, f, u
    cdef double max_abs_phi = 0.0
    with nogil:
        for g in range(G):
            u = wu_a[g]
            p = wv_a[g]
            f = 0.0
            psi[g, 0] = p
            for k in range(horizon):
                f = f + b * p + half_s2 * p * p
                p = p + (u - a * p)
                phi[g, k + 1] = f
                psi[g, k + 1] = p
            if cabs2(f) > max_abs_phi:
                max_abs_phi = cabs2(f)
    if horizon > 0 and max_abs_phi > PHI_BOUND * PHI_BOUND:
        raise Overflow("vasicek flow: |phi| exceeded bound")
    return phi, psi


def heston_flow(wu, wv, double a, double b, double c, double rho,
                double dt, int substeps, int horizon):
    """See crcterm.backend._corepy.heston_flow."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] wu_a = np.ascontiguousarray(wu, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] wv_a = np.ascontiguousarray(wv, dtype=np.complex128)
    cdef Py_ssize_t G = wu_a.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] phi = np.zeros((G, horizon + 1), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] psi = np.zeros((G, horizon + 1), dtype=np.complex128)
    cdef double h = dt / substeps
    cdef double half_c2 = 0.5 * c * c
    cdef double ab = a * b
    cdef double h6 = h / 6.0
    cdef Py_ssize_t g, k, j
    cdef double complex u_part, crho_u, p, f, k1, k2, k3, k4, p2, p3, p4
    cdef int bad = 0
    cdef Py_ssize_t bad_step = -1
    with nogil:
        for g in range(G):
            u_part = 0.5 * (wu_a[g] * wu_a[g] - wu_a[g])
            crho_u = c * rho * wu_a[g]
            p = wv_a[g]
            f = 0.0
            psi[g, 0] = p
            for k in range(horizon):
                for j in range(substeps):
                    k1 = u_part + half_c2 * p * p + crho_u * p - a * p
                    p2 = p + 0.5 * h * k1
                    k2 = u_part + half_c2 * p2 * p2 + crho_u * p2 - a * p2
                    p3 = p + 0.5 * h * k2
                    k3 = u_part + half_c2 * p3 * p3 + crho_u * p3 - a * p3
                    p4 = p + h * k3
                    k4 = u_part + half_c2 * p4 * p4 + crho_u * p4 - a * p4
                    f = f + h6 * ab * (p + 2.0 * p2 + 2.0 * p3 + p4)
                    p = p + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if cabs2(p) > PSI_BOUND * PSI_BOUND or p != p:
                    bad = 1
                    bad_step = k
                    break
                psi[g, k + 1] = p
                phi[g, k + 1] = f
            if bad:
                break
    if bad:
        raise OdeStepError("heston flow: psi blow-up at step %d" % bad_step)
    if horizon > 0 and np.max(np.abs(phi[:, horizon])) > PHI_BOUND:
        raise Overflow("heston flow: |phi| exceeded bound")
    return phi, psi


def crc_surface_step(theta, alpha_tab, beta_tab, sigma_tab, state_idx, y, dy):
    """See crcterm.backend._corepy.crc_surface_step."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] th = np.ascontiguousarray(theta, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] at = np.ascontiguousarray(alpha_tab, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] bt = np.ascontiguousarray(beta_tab, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] st = np.ascontiguousarray(sigma_tab, dtype=np.complex128)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] si = np.ascontiguousarray(state_idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t N = th.shape[0]
    cdef Py_ssize_t G = th.shape[1]
    cdef Py_ssize_t H = th.shape[2]
    cdef Py_ssize_t Hm1 = H - 1
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] out = np.empty((N, G, Hm1), dtype=np.complex128)
    cdef Py_ssize_t n, g, x, s
    cdef double yn, dyn
    with nogil:
        for n in range(N):
            s = si[n]
            yn = yv[n]
            dyn = dyv[n]
            for g in range(G):
                for x in range(Hm1):
                    out[n, g, x] = (th[n, g, x + 1] + at[s, g, x]
                                    + bt[s, g, x] * yn + st[s, g, x] * dyn)
    return out
