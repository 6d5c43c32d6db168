"""Hull-White extensions: extraction, validation, membership.

An extension pins an arbitrary initial configuration to a base model by a
time-dependent shift mu of the constant vector field. Two representations
are used:

* ParametricDriftShift: mu(u, k) = i u c(k) acting on the constant-coefficient
  block -- exact at one designated pin, trivially samplable (point mass).
* TabulatedMu: values mu(w, k) on grid-derived arguments -- grid-wide, used
  for validation and diagnostics, not samplable in general.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from crcterm.errors import ExtrapolationNeeded, Unsolvable, Unsupported
from crcterm.riccati import flow_for_grid, riccati_flow
from crcterm.surfaces import CharSurface, cumulate

_IM_TOL = 1e-8
_RECON_TOL = 1e-10
_AXIS_TOL = 1e-10
EIG_TOL = -1e-8


@dataclass(frozen=True, eq=False)
class ParametricDriftShift:
    """mu(u, k) = i u c(k): a deterministic shift c(k) per future period."""

    c: np.ndarray            # (horizon,) float
    pin: complex             # designated extraction pin (surface convention)

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        if not np.all(np.isfinite(c)):
            raise Unsolvable("drift shift must be real and finite")
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    @property
    def horizon(self):
        return self.c.shape[0]

    def mu_eta(self, u, k):
        """mu at surface argument u (i.e. log E exp(i u delta) of the shift)."""
        return 1j * np.asarray(u, dtype=np.complex128) * self.c[k]


@dataclass(frozen=True, eq=False)
class TabulatedMu:
    """mu values on arguments i*s for s on the real grid, per period k."""

    s_args: np.ndarray       # (A,) ascending real coordinates of arguments i*s
    values: np.ndarray       # (A, horizon) complex

    @property
    def horizon(self):
        return self.values.shape[1]

    def at(self, z, k):
        """Evaluate mu(z, k) for arguments z on the tabulation axis.

        Piecewise-linear interpolation in Im(z); arguments outside the hull
        raise ExtrapolationNeeded, arguments off the axis are Unsupported.
        """
        return _interp_on_axis(self.s_args, self.values[:, k], z)

    def mu_eta(self, u, k):
        """mu at surface argument u >= is mapped to the axis argument i*u."""
        return self.at(1j * np.asarray(u, dtype=np.float64), k)


@dataclass(frozen=True, eq=False)
class HullWhiteExtension:
    """Base model plus the extension cumulant pinning a configuration."""

    model: object                    # AffineModelSpec of the base
    mu: object                       # ParametricDriftShift | TabulatedMu
    grid: object                     # UGrid the extraction saw
    anchor: float                    # state the configuration is attached to
    start_time: int = 0

    @property
    def is_parametric(self):
        return isinstance(self.mu, ParametricDriftShift)

    @property
    def c0(self):
        """First-period shift used when sampling the extended model."""
        if not self.is_parametric:
            raise Unsupported("only parametric extensions are samplable")
        return float(self.mu.c[0]) if self.mu.horizon else 0.0


@dataclass(frozen=True)
class ValidityReport:
    """Result of the increment-cumulant (Bochner) validation."""

    valid: bool
    min_eigenvalues: np.ndarray      # (horizon,) smallest Gram eigenvalue per k
    eig_tol: float
    mu_zero_ok: bool
    hermitian_ok: bool

    @property
    def margin(self):
        return float(np.min(self.min_eigenvalues)) if self.min_eigenvalues.size else 0.0


def _pin_flow(model, pin, horizon):
    wu, wv = model.flow_pins(np.array([pin], dtype=np.complex128))
    fl = riccati_flow(model, wu, wv, horizon)
    return fl.phi[0], fl.psi[0]


def extract_mu_parametric(model, nu0, y, pin=None):
    """Drift-shift extension reproducing nu0 at one designated pin exactly.

    The telescoped pin equation determines one scalar c(t-1) per horizon t.
    For models with a constant-coefficient block the transported argument is
    the pin itself and the recursion collapses to first differences; for the
    pure-state view it is a triangular solve along transported arguments.

    Raises:
        Unsolvable: vanishing linear coefficient, or the pin equation forces
            non-real shifts.
    """
    pin = model.default_pin if pin is None else pin
    w = 1j * pin
    if abs(w) < 1e-14:
        raise Unsolvable("pin u = 0 has vanishing linear coefficient")
    H = nu0.horizon
    target = nu0.pin_values(pin)
    phi, psi = _pin_flow(model, pin, H)
    if model.n >= 1:
        base_vals = np.diff(phi) + np.diff(psi) * float(y)
        c_cplx = (target - base_vals) / w
    else:
        c_cplx = np.zeros(H, dtype=np.complex128)
        target_cum = np.cumsum(target)
        for t in range(1, H + 1):
            inner = np.dot(psi[1:t][::-1], c_cplx[: t - 1]) if t > 1 else 0.0
            resid = target_cum[t - 1] - phi[t] - (psi[t] - w) * float(y) - inner
            c_cplx[t - 1] = resid / w
    if np.max(np.abs(c_cplx.imag), initial=0.0) > _IM_TOL:
        raise Unsolvable("pin equation forces non-real drift shifts")
    ext = HullWhiteExtension(
        model=model,
        mu=ParametricDriftShift(c=c_cplx.real, pin=pin),
        grid=nu0.grid, anchor=float(y), start_time=nu0.time_stamp,
    )
    recon = reconstruct_cumulative(ext, pins=np.array([pin]))[0]
    err = float(np.max(np.abs(recon - np.cumsum(target))))
    if err > _RECON_TOL:
        raise Unsolvable(f"pin reconstruction residual {err:g} above tolerance")
    return ext


def _interp_on_axis(s_args, table_col, z):
    """Linear interpolation of a tabulated column at axis arguments z = i*s."""
    z = np.asarray(z, dtype=np.complex128)
    if np.any(np.abs(z.real) > _AXIS_TOL * np.maximum(1.0, np.abs(z))):
        raise Unsupported("transported argument left the tabulation axis")
    s = z.imag
    if np.any(s < s_args[0] - 1e-12) or np.any(s > s_args[-1] + 1e-12):
        raise ExtrapolationNeeded("transported argument outside the tabulated hull")
    return np.interp(s, s_args, table_col.real) + 1j * np.interp(s, s_args, table_col.imag)


def extract_mu_tabulated(model, nu0, y):
    """Grid-wide extension table via the canonical anti-diagonal selection.

    At each horizon t the full residual is attributed to the newest period
    mu(., t-1), whose transported argument is on-grid; earlier periods are
    re-evaluated at transported arguments by linear interpolation.

    Raises:
        ExtrapolationNeeded: a transported argument leaves the tabulated hull.
    """
    grid = nu0.grid
    H = nu0.horizon
    nr = grid.n_real
    s_args = grid.real_points
    w_args = 1j * s_args
    wu, wv = model.flow_pins(s_args.astype(np.complex128))
    fl = riccati_flow(model, wu, wv, H)
    phi, psi = fl.phi, fl.psi
    vals = np.zeros((nr, H), dtype=np.complex128)
    if model.n >= 1:
        base = np.diff(phi, axis=1) + np.diff(psi, axis=1) * float(y)
        vals[:, :] = nu0.values[:nr, :] - base
    else:
        target_cum = np.cumsum(nu0.values[:nr, :], axis=1)
        for t in range(1, H + 1):
            resid = (target_cum[:, t - 1] - phi[:, t]
                     - (psi[:, t] - w_args) * float(y))
            for k in range(t - 1):
                resid = resid - _interp_on_axis(s_args, vals[:, k], psi[:, t - 1 - k])
            vals[:, t - 1] = resid
    mu = TabulatedMu(s_args=s_args.copy(), values=vals)
    return HullWhiteExtension(model=model, mu=mu, grid=grid,
                              anchor=float(y), start_time=nu0.time_stamp)


def reconstruct_cumulative(ext, pins=None):
    """Cumulative configuration values the extension generates.

    Returns an array (n_pins, horizon) whose (g, t-1) entry is
    sum_{k<t} nu(u_g, k) rebuilt from the base flow plus the extension;
    pins are surface arguments (default: the extraction pin for parametric
    extensions, the real grid for tabulated ones).
    """
    model = ext.model
    mu = ext.mu
    H = mu.horizon
    if pins is None:
        if ext.is_parametric:
            pins = np.array([mu.pin], dtype=np.complex128)
        else:
            pins = ext.grid.real_points.astype(np.complex128)
    pins = np.asarray(pins, dtype=np.complex128)
    wu, wv = model.flow_pins(pins)
    fl = riccati_flow(model, wu, wv, H)
    w = 1j * pins
    v0 = w if model.n == 0 else np.zeros_like(w)
    base = fl.phi[:, 1:] + (fl.psi[:, 1:] - v0[:, None]) * ext.anchor
    if ext.is_parametric and model.n >= 1:
        # constant transported argument: the shift telescopes
        return base + w[:, None] * np.cumsum(mu.c)[None, :]
    if ext.is_parametric:
        # sum_{k<t} psi(w, t-1-k) c(k): a convolution along the horizon
        add = np.stack([np.convolve(fl.psi[g, :H], mu.c)[:H] for g in range(pins.size)])
        return base + add
    out = np.empty((pins.size, H), dtype=np.complex128)
    for t in range(1, H + 1):
        add = np.zeros(pins.size, dtype=np.complex128)
        for k in range(t):
            arg = w if model.n >= 1 else fl.psi[:, t - 1 - k]
            add = add + mu.at(arg, k)
        out[:, t - 1] = base[:, t - 1] + add
    return out


def validate_inc(ext, order=8, eig_tol=EIG_TOL):
    """Necessary-condition checks that mu is an increment cumulant.

    Per period k: mu(0, k) = 0, Hermitian symmetry, and positive
    semidefiniteness of the order x order Gram matrix [exp(mu(u_i - u_j, k))]
    (Bochner test) on equally spaced arguments inside the grid span.
    """
    mu = ext.mu
    H = mu.horizon
    s_max = float(np.max(ext.grid.real_points)) if ext.grid is not None else 4.0
    if s_max <= 0:
        raise ValueError("grid span must be positive for the Bochner test")
    # Snap the evaluation points to grid nodes when a uniform stride fits, so
    # tabulated extensions are evaluated exactly (no interpolation error in
    # the Gram matrix); otherwise fall back to equally spaced points.
    h = ext.grid.spacing if ext.grid is not None else None
    if h and h * (order - 1) <= s_max:
        stride = int(s_max / (order - 1) / h) * h
        pts = np.arange(order) * max(stride, h)
    else:
        pts = np.linspace(0.0, s_max, order)
    diffs = pts[:, None] - pts[None, :]
    mins = np.empty(H)
    mu_zero_ok = True
    herm_ok = True
    for k in range(H):
        pos = np.abs(diffs)
        m_pos = mu.mu_eta(pos.ravel(), k).reshape(order, order)
        m = np.where(diffs >= 0, m_pos, np.conj(m_pos))
        if abs(mu.mu_eta(np.array([0.0]), k)[0]) > 1e-9:
            mu_zero_ok = False
        gram = np.exp(m)
        herm_dev = float(np.max(np.abs(gram - gram.conj().T)))
        if herm_dev > 1e-8:
            herm_ok = False
        gram = 0.5 * (gram + gram.conj().T)
        mins[k] = float(np.linalg.eigvalsh(gram)[0])
    valid = bool(mu_zero_ok and herm_ok and (H == 0 or np.min(mins) >= eig_tol))
    return ValidityReport(valid=valid, min_eigenvalues=mins, eig_tol=eig_tol,
                          mu_zero_ok=mu_zero_ok, hermitian_ok=herm_ok)


def membership_I(model, y, theta, mode="tabulated", order=8):
    """Is theta generatable above the model at state y? Returns (bool, witness).

    ``tabulated`` extracts the grid-wide table and Bochner-validates it (the
    diagnostic notion); ``parametric`` extracts the samplable drift shift,
    which the point-mass law validates identically.
    """
    try:
        if mode == "tabulated":
            ext = extract_mu_tabulated(model, theta, y)
        elif mode == "parametric":
            ext = extract_mu_parametric(model, theta, y)
        else:
            raise ValueError(f"unknown membership mode {mode!r}")
        report = validate_inc(ext, order=order)
    except (Unsolvable, ExtrapolationNeeded, Unsupported):
        return False, None
    return (True, ext) if report.valid else (False, None)


def membership_J(y, theta, candidate_model, mode="tabulated", order=8):
    """Admissibility of a candidate parameter set for the configuration theta."""
    ok, _ = membership_I(candidate_model, y, theta, mode=mode, order=order)
    return ok
