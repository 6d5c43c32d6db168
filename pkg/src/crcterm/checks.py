"""Independent verification: structural conditions and brute-force oracles.

Deterministic checks (short end, drift, surface-leaf projection, exponential
martingale) compare closed-form or enumerated routes at absolute tolerances;
Monte Carlo checks compare against a 4-standard-error band and report the
band alongside the residual.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from crcterm.errors import InsufficientPaths, PinMissing, TooLarge
from crcterm.laws import log_char_on_grid
from crcterm.riccati import flow_for_grid
from crcterm.surfaces import CharSurface, cumulate

DET_TOL = 1e-12
ODE_TOL = 1e-9
MC_BAND = 4.0
_ENUM_GUARD = 10_000_000


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one verification check."""

    name: str
    max_residual: float
    tolerance: float
    passed: bool
    per_pin: Optional[dict] = None
    se: Optional[float] = None
    details: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        band = f" se={self.se:.3e}" if self.se is not None else ""
        return (f"{self.name:<28s} residual={self.max_residual:.3e} "
                f"tol={self.tolerance:.3e}{band} {flag}")


# ---------------------------------------------------------------------------
# finite-state oracle


@dataclass(frozen=True, eq=False)
class FiniteStateModel:
    """Explicit finite-state chain used as a brute-force oracle.

    The X-increment of a transition i -> j defaults to the level difference
    x_values[j] - x_values[i]; an explicit dx_table (S, S) overrides it,
    which also lets states encode auxiliary coordinates (increment signs,
    volatility regimes). The kernel may be time-dependent (leading axis).
    """

    x_values: np.ndarray           # (S,)
    kernel: np.ndarray             # (S, S) or (T, S, S), rows sum to 1
    y_values: Optional[np.ndarray] = None
    dx_table: Optional[np.ndarray] = None
    horizon: int = 16

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim == 2:
            k = k[None, :, :]
        if np.any(k < 0):
            raise ValueError("transition probabilities must be >= 0")
        rows = k.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > 1e-14:
            raise ValueError("kernel rows must sum to 1 within 1e-14")
        object.__setattr__(self, "kernel", k)
        x = np.asarray(self.x_values, dtype=np.float64)
        object.__setattr__(self, "x_values", x)
        if self.y_values is not None:
            object.__setattr__(
                self, "y_values", np.asarray(self.y_values, dtype=np.float64))
        dx = self.dx_table
        if dx is None:
            dx = x[None, :] - x[:, None]
        object.__setattr__(self, "dx_table",
                           np.asarray(dx, dtype=np.float64))

    @property
    def n_states(self):
        return self.x_values.size

    def kernel_at(self, t):
        k = self.kernel
        return k[min(t, k.shape[0] - 1)]

    def enumerate_paths(self, s, t, start_state):
        """All state paths from s to t with probabilities and X-increments.

        Returns a list of (state, prob, dx) triples per elapsed step count,
        i.e. out[j] describes time s+j. Literal enumeration; guarded.
        """
        steps = t - s
        if self.n_states ** max(steps, 1) > _ENUM_GUARD:
            raise TooLarge("state-space^steps exceeds the enumeration guard")
        levels = [[(start_state, 1.0, 0.0)]]
        for j in range(steps):
            k = self.kernel_at(s + j)
            nxt = []
            for (st, p, dx) in levels[-1]:
                for s2 in range(self.n_states):
                    pr = k[st, s2]
                    if pr > 0.0:
                        nxt.append((s2, p * pr, dx + self.dx_table[st, s2]))
            levels.append(nxt)
        return levels

    def char_increment(self, s, t, start_state, u):
        """E[exp(i u (X_t - X_s)) | state at s] by path enumeration."""
        levels = self.enumerate_paths(s, t, start_state)
        u = np.asarray(u, dtype=np.complex128)
        probs = np.array([p for (_, p, _) in levels[-1]])
        dxs = np.array([dx for (_, _, dx) in levels[-1]])
        return np.exp(1j * np.multiply.outer(u, dxs)) @ probs

    def one_step_kappa(self, s, start_state, grid):
        """Enumerated one-step cumulant at a state, branch-tracked on grid."""
        return log_char_on_grid(
            self.char_increment(s, s + 1, start_state, grid.points), grid)


def oracle_forward_characteristics(fs_model, s, t, grid, start_state):
    """Exact forward-characteristic surface of a finite-state chain.

    Enumerates E[exp(i u (X_tau - X_s)) | state] for every tau in (s, t],
    unwraps the logs along the grid and first-differences them in maturity.
    Serves as ground truth for the structural checks on small instances.

    Raises:
        TooLarge: enumeration guard exceeded.
    """
    steps = t - s
    if fs_model.n_states ** max(steps, 1) > _ENUM_GUARD:
        raise TooLarge("state-space^steps exceeds the enumeration guard")
    levels = fs_model.enumerate_paths(s, t, start_state)
    L = np.zeros((grid.n_points, steps + 1), dtype=np.complex128)
    u = grid.points
    for tau in range(1, steps + 1):
        probs = np.array([p for (_, p, _) in levels[tau]])
        dxs = np.array([dx for (_, _, dx) in levels[tau]])
        ch = np.exp(1j * np.multiply.outer(u, dxs)) @ probs
        L[:, tau] = log_char_on_grid(ch, grid)
    values = np.diff(L, axis=1)
    return CharSurface(grid=grid, values=values, time_stamp=s)


# ---------------------------------------------------------------------------
# structural residuals


def short_end_residual(theta, kappa_values, tol=DET_TOL, name="short_end"):
    """|kappa(u) - theta(u, 0)| per pin: the short-end consistency residual."""
    kappa_values = np.asarray(kappa_values, dtype=np.complex128)
    resid = np.abs(kappa_values - theta.values[:, 0])
    per_pin = {complex(u): float(r) for u, r in zip(theta.grid.points, resid)}
    mx = float(np.max(resid))
    return CheckReport(name=name, max_residual=mx, tolerance=tol,
                       passed=mx <= tol, per_pin=per_pin)


def drift_residual(decomp, joint_cumulant, s, x, tol=DET_TOL,
                   name="drift_condition"):
    """Both sides of the drift condition from a decomposition triple.

    For every maturity budget xx <= x and pin u:
        lhs = kappa_X(u) - sum_{k<=xx} alpha(u, k)
        rhs = kappa_{(X, eps)}(u, -i sum_{k<=xx} sigma^.(u, k))
    where kappa_X(u) = joint_cumulant(u, 0). When the triple declares local
    independence the simplified form (alpha sums against the eps-cumulant
    alone) is checked as well. The triple's surfaces are time-s fields; the
    supplied joint cumulant must belong to the same time.
    """
    grid = decomp.alpha.grid
    pts = grid.points
    d = decomp.d
    worst = 0.0
    per_pin = {}
    for xx in range(x + 1):
        a_sum = cumulate(decomp.alpha, xx + 1)
        s_sums = np.stack([cumulate(sg, xx + 1) for sg in decomp.sigmas])
        for gi, u in enumerate(pts):
            kx = joint_cumulant(u, np.zeros(d, dtype=np.complex128))
            v = -1j * s_sums[:, gi]
            lhs = kx - a_sum[gi]
            rhs = joint_cumulant(u, v)
            r = abs(lhs - rhs)
            if decomp.locally_independent:
                r2 = abs(-a_sum[gi] - joint_cumulant(0.0, v) + 0.0)
                r = max(r, r2)
            worst = max(worst, r)
            key = complex(u)
            per_pin[key] = max(per_pin.get(key, 0.0), r)
    return CheckReport(name=name, max_residual=worst, tolerance=tol,
                       passed=worst <= tol, per_pin=per_pin,
                       details=f"s={s}, maturities<={x}")


def crc_joint_cumulant(model, y, c0=0.0):
    """Joint one-step cumulant of (X, eps) for an extended affine model.

    eps = (X-increment, Y-increment); X is the first driving coordinate, so
    kappa_{(X, eps)}(u, v) = F(w, q) + w c0 + R_C(w, q) y with
    w = i (u + v1) and q = i v2.
    """

    def joint(u, v):
        w = 1j * (u + v[0])
        q = 1j * v[1]
        return complex(model.F(w, q) + w * c0 + model.R_C(w, q) * y)

    return joint


def exp_martingale_check(theta, tol=1e-10):
    """max_x |theta(-i, x)|: certifies exp(X) surfaces as martingale-consistent.

    Raises:
        PinMissing: the pin -i is not on the grid.
    """
    if not theta.grid.has_pin(-1j):
        raise PinMissing("exp-martingale check needs the pin u = -i")
    vals = np.abs(theta.pin_values(-1j))
    mx = float(np.max(vals))
    return CheckReport(name="exp_martingale", max_residual=mx, tolerance=tol,
                       passed=mx <= tol)


def fdr_projection_residual(theta_path, params_path, y_path, c_path=None,
                            tol=ODE_TOL, basis_surfaces=None):
    """Distance of each surface from the affine leaf of its parameters.

    Per time t the basis is the sigma-field set of params_path[t]; the
    deterministic part is the flow first-difference plus the drift-shift
    layer (c_path, when given). Reports the largest projection residual.
    ``basis_surfaces`` overrides the basis (an empty list exercises the
    no-factor case, where the residual is |theta - A| itself).
    """
    from crcterm.crc import sigma_fields
    from crcterm.models import build_model

    worst = 0.0
    for t, theta in enumerate(theta_path):
        params = params_path[t] if isinstance(params_path, (list, tuple)) \
            else params_path
        model = build_model(params)
        grid = theta.grid
        H = theta.horizon
        phi, _ = flow_for_grid(model, grid, H)
        a_vals = np.diff(phi, axis=1)
        if c_path is not None:
            c = np.zeros(H)
            c_t = np.asarray(c_path[t], dtype=np.float64)
            c[: min(H, c_t.size)] = c_t[: min(H, c_t.size)]
            a_vals = a_vals + 1j * grid.points[:, None] * c[None, :]
        r = (theta.values - a_vals).ravel()
        if basis_surfaces is None:
            basis = [sg.values.ravel() for sg in sigma_fields(params, grid, H)]
        else:
            basis = [sg.values[:, :H].ravel() for sg in basis_surfaces]
        if basis:
            B = np.stack(basis, axis=1)
            gram = np.real(B.conj().T @ B)
            rhs = np.real(B.conj().T @ r)
            beta = np.linalg.solve(gram, rhs)
            r = r - B @ beta
        worst = max(worst, float(np.max(np.abs(r))))
    return CheckReport(name="fdr_projection", max_residual=worst,
                       tolerance=tol, passed=worst <= tol)


# ---------------------------------------------------------------------------
# Monte Carlo checks


def _mc_mean_se(w):
    mean = w.mean()
    se = float(np.sqrt((w.real.var() + w.imag.var()) / w.size))
    return mean, se


def martingale_mc(ensemble, theta0, pins, t, band=MC_BAND, det_tol=DET_TOL):
    """MC characteristic function of Z_t against exp(cumulate(theta0, t)).

    Deterministic increments give a zero-width band; those pins fall back to
    an absolute tolerance. verified per pin within band * standard error.

    Raises:
        InsufficientPaths: some band is wider than the target magnitude.
    """
    ok = ~ensemble.failed
    n = int(ok.sum())
    if n == 0:
        raise InsufficientPaths("no surviving paths")
    dz = ensemble.Z[ok, t] - ensemble.Z[ok, 0]
    cum = cumulate(theta0, t)
    per_pin = {}
    worst = 0.0
    worst_band = 0.0
    passed = True
    for u in pins:
        gi = theta0.grid.pin_index(u)
        target = np.exp(cum[gi])
        w = np.exp(1j * u * dz)
        mean, se = _mc_mean_se(w)
        resid = abs(mean - target)
        limit = max(band * se, det_tol)
        if band * se > abs(target) and se > 0:
            raise InsufficientPaths(
                f"band {band * se:.2e} exceeds |target| at pin {u}")
        per_pin[complex(u)] = (float(resid), se)
        if resid > limit:
            passed = False
        if resid > worst:
            worst, worst_band = float(resid), float(limit)
    return CheckReport(name=f"martingale_mc[t={t}]", max_residual=worst,
                       tolerance=worst_band, passed=passed, per_pin=per_pin,
                       se=worst_band / band if band else None,
                       details=f"{n} paths")


def bond_consistency(ensemble, theta0, T, band=MC_BAND, det_tol=DET_TOL):
    """MC discount factor against the surface bond price at the pin u = i.

    The ensemble's Z is the integrated (extension-adjusted) short rate, so
    exp(-(Z_T - Z_0)) is the realized discount factor.

    Raises:
        PinMissing: pin i not on the grid.
    """
    if not theta0.grid.has_pin(1j):
        raise PinMissing("bond consistency needs the pin u = i")
    ok = ~ensemble.failed
    n = int(ok.sum())
    if n == 0:
        raise InsufficientPaths("no surviving paths")
    d = np.exp(-(ensemble.Z[ok, T] - ensemble.Z[ok, 0]))
    target = float(np.exp(cumulate(theta0, T))[theta0.grid.pin_index(1j)].real)
    mean = float(d.mean())
    se = float(d.std() / np.sqrt(n))
    resid = abs(mean - target)
    limit = max(band * se, det_tol)
    if band * se > abs(target) and se > 0:
        raise InsufficientPaths("band exceeds the bond price; uninformative")
    return CheckReport(name=f"bond_consistency[T={T}]", max_residual=resid,
                       tolerance=limit, passed=resid <= limit, se=se,
                       details=f"{n} paths, P={target:.6f}")
