"""Consistent-recalibration simulation.

One step: sample the Hull-White-extended one-step model, move the surface by
shift + alpha-drift + sigma-fields * factor increment, re-propose parameters
inside the admissible set, and extract a fresh extension witness. Paths are
independent; the ensemble engine vectorizes across paths for the shipped
finite-state policies and falls back to the scalar step otherwise.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from crcterm import backend
from crcterm.errors import AdmissibilityExhausted, HorizonExhausted, Unsolvable
from crcterm.hullwhite import extract_mu_parametric, membership_I
from crcterm.models import build_model
from crcterm.riccati import flow_for_grid
from crcterm.surfaces import CharSurface, shift

_C_IM_TOL = 1e-8


# ---------------------------------------------------------------------------
# vector fields of the surface equation


def sigma_fields(params, grid, horizon):
    """Surface loadings of the factor increments: sigma^i = d1 psi_C.

    sigma^i(u, x) = psi_C^i(iu, 0, x+1) - psi_C^i(iu, 0, x). One surface per
    factor coordinate (the shipped models have one).
    """
    model = params if hasattr(params, "flow") else build_model(params)
    _, psi = flow_for_grid(model, grid, horizon)
    return [CharSurface(grid=grid, values=np.diff(psi[:, : horizon + 1], axis=1))]


def alpha_drift(params, y, grid, horizon):
    """Drift field of the surface equation: negative second flow differences.

    alpha(u, x) = -[phi(x+2) - 2 phi(x+1) + phi(x)]
                  - [psi(x+2) - 2 psi(x+1) + psi(x)] * y.
    """
    model = params if hasattr(params, "flow") else build_model(params)
    phi, psi = flow_for_grid(model, grid, horizon + 1)
    d2phi = np.diff(phi, n=2, axis=1)[:, :horizon]
    d2psi = np.diff(psi, n=2, axis=1)[:, :horizon]
    return CharSurface(grid=grid, values=-(d2phi + d2psi * float(y)))


# ---------------------------------------------------------------------------
# state and policies


@dataclass(frozen=True)
class CrcState:
    """Full state of the recalibration machine at one point in time."""

    t: int
    Z: float
    Y: float
    theta: CharSurface
    params: object
    ext: object = None      # HullWhiteExtension witnessing theta in I(params, Y)


def initial_crc_state(params, z0, y0, theta0, pin=None):
    """Assemble a valid starting state with its extension witness."""
    model = build_model(params)
    ext = extract_mu_parametric(model, theta0, y0, pin=pin)
    return CrcState(t=theta0.time_stamp, Z=float(z0), Y=float(y0),
                    theta=theta0, params=params, ext=ext)


class ConstantPolicy:
    """Keep the initial parameter vector forever."""

    uniforms_per_step = 0

    def __init__(self, params, max_retries=32):
        self.params = params
        self.max_retries = max_retries
        self.param_states = [params]

    def propose(self, t, y, theta, rng, current=None):
        return self.params

    def next_state_vec(self, state_idx, t, uniforms):
        return state_idx


class TwoStatePolicy:
    """Randomly flip between two admissible parameter vectors."""

    uniforms_per_step = 1

    def __init__(self, params_a, params_b, switch_prob=0.25, max_retries=32):
        if not 0.0 <= switch_prob <= 1.0:
            raise ValueError("switch_prob must lie in [0, 1]")
        self.param_states = [params_a, params_b]
        self.switch_prob = switch_prob
        self.max_retries = max_retries

    def propose(self, t, y, theta, rng, current=None):
        flip = rng.random() < self.switch_prob
        if current is None:
            return self.param_states[int(flip)]
        idx = self.param_states.index(current)
        return self.param_states[1 - idx if flip else idx]

    def next_state_vec(self, state_idx, t, uniforms):
        flip = uniforms < self.switch_prob
        return np.where(flip, 1 - state_idx, state_idx)


class RandomWalkPolicy:
    """Multiplicative random-walk proposals projected into parameter bounds."""

    uniforms_per_step = 0
    param_states = None

    def __init__(self, rel_step=0.05, max_retries=32):
        self.rel_step = rel_step
        self.max_retries = max_retries

    def propose(self, t, y, theta, rng, current=None):
        raise NotImplementedError  # bound at simulation start via bind()

    def bind(self, params):
        policy = self

        class _Bound(RandomWalkPolicy):
            def propose(self, t, y, theta, rng, current=None):
                arr = (current or params).as_array()
                bumped = arr * np.exp(policy.rel_step * rng.normal(size=arr.size))
                kwargs = dict(zip(params.labels(), bumped))
                if "rho" in kwargs:
                    kwargs["rho"] = float(np.clip(
                        params.rho + policy.rel_step * rng.normal(), -1.0, 1.0))
                    kwargs.update(dt=params.dt, substeps=params.substeps)
                    c_max = float(np.sqrt(2 * kwargs["a"] * kwargs["b"]))
                    kwargs["c"] = min(kwargs["c"], c_max)
                return type(params)(**kwargs)

        b = _Bound(rel_step=self.rel_step, max_retries=self.max_retries)
        return b


# ---------------------------------------------------------------------------
# scalar step


def crc_step(state, policy, rng):
    """One full recalibration step (scalar reference implementation).

    Sampling uses the current parameters and the witness shift c(0); the
    surface moves by shift + alpha + sigma * (factor increment); the policy
    proposal is admissibility-checked through the samplable (parametric)
    witness, falling back to the current parameters.
    """
    if state.theta.horizon < 2:
        raise HorizonExhausted("surface horizon exhausted; cannot step")
    model = build_model(state.params)
    c0 = state.ext.c0 if state.ext is not None else 0.0
    normals = rng.normal(size=model.draws_per_step)
    z2, y2 = model.one_step(state.Z, state.Y, c0, normals)
    z2, y2 = float(z2), float(y2)
    d_y = y2 - state.Y

    grid = state.theta.grid
    hm1 = state.theta.horizon - 1
    alpha = alpha_drift(state.params, state.Y, grid, hm1)
    sig = sigma_fields(state.params, grid, hm1)[0]
    new_values = (state.theta.values[:, 1:] + alpha.values + sig.values * d_y)
    theta2 = CharSurface(grid=grid, values=new_values,
                         time_stamp=state.theta.time_stamp + 1)

    new_params, ext2 = None, None
    for _ in range(max(1, policy.max_retries)):
        cand = policy.propose(state.t + 1, y2, theta2, rng, state.params)
        ok, ext = membership_I(build_model(cand), y2, theta2, mode="parametric")
        if ok:
            new_params, ext2 = cand, ext
            break
    if new_params is None:
        ok, ext = membership_I(model, y2, theta2, mode="parametric")
        if not ok:
            raise AdmissibilityExhausted(
                "policy retries spent and current parameters inadmissible")
        new_params, ext2 = state.params, ext
    return CrcState(t=state.t + 1, Z=z2, Y=y2, theta=theta2,
                    params=new_params, ext=ext2)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class PathEnsemble:
    """Simulated trajectories of (Z, Y, parameter state) plus metadata."""

    Z: np.ndarray                 # (N, steps+1)
    Y: np.ndarray                 # (N, steps+1)
    state_idx: np.ndarray         # (N, steps+1) int16; -1 when not state-based
    params_list: list             # parameter vector per state index
    failed: np.ndarray            # (N,) bool
    theta0: CharSurface
    seed: int
    model_name: str
    theta_path: Optional[np.ndarray] = None   # (steps+1, G, K) for 1-path runs
    c0_path: Optional[np.ndarray] = None      # (N, steps) leading shifts
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.Z.shape[0]

    @property
    def n_steps(self):
        return self.Z.shape[1] - 1

    def params_path(self):
        """Parameter components per path and step, shape (N, steps+1, P)."""
        comps = np.stack([pv.as_array() for pv in self.params_list])
        return comps[np.maximum(self.state_idx, 0)]


def path_rng(seed, path_index):
    """Counter-based per-path stream: Philox keyed by seed, jumped per path."""
    return np.random.Generator(np.random.Philox(key=seed).jumped(path_index))


def _state_tables(models, grid, horizon, pin, alpha_scale, sigma_models=None):
    """Per-parameter-state update tables up to the maximum horizon."""
    P = len(models)
    G = grid.n_points
    alpha_tab = np.empty((P, G, horizon - 1), dtype=np.complex128)
    beta_tab = np.empty((P, G, horizon - 1), dtype=np.complex128)
    sigma_tab = np.empty((P, G, horizon - 1), dtype=np.complex128)
    dphi_pin = np.empty((P, horizon), dtype=np.complex128)
    dpsi_pin = np.empty((P, horizon), dtype=np.complex128)
    pin_idx = grid.pin_index(pin)
    for s, model in enumerate(models):
        phi, psi = flow_for_grid(model, grid, horizon + 1)
        alpha_tab[s] = -np.diff(phi, n=2, axis=1)[:, : horizon - 1] * alpha_scale
        beta_tab[s] = -np.diff(psi, n=2, axis=1)[:, : horizon - 1] * alpha_scale
        sig_model = model if sigma_models is None else sigma_models[s]
        _, psi_s = flow_for_grid(sig_model, grid, horizon + 1)
        sigma_tab[s] = np.diff(psi_s, axis=1)[:, : horizon - 1]
        dphi_pin[s] = np.diff(phi, axis=1)[pin_idx, :horizon]
        dpsi_pin[s] = np.diff(psi, axis=1)[pin_idx, :horizon]
    return alpha_tab, beta_tab, sigma_tab, dphi_pin, dpsi_pin, pin_idx


def simulate_paths(initial, policy, n_paths, n_steps, seed, chunk_size=20000,
                   record_theta=0, alpha_scale=1.0, flip_rho_sign=False):
    """Simulate a reproducible ensemble of recalibration paths.

    Per-path randomness comes from a counter-based stream keyed by
    (seed, path_index), so the ensemble is identical for equal (seed,
    configuration) regardless of chunking. Failed paths (non-finite state or
    inadmissible witness) are flagged, never dropped.

    ``alpha_scale`` and ``flip_rho_sign`` are negative-control knobs for the
    verification suite: they corrupt the drift field / the sign of the
    correlation inside the sigma-fields without touching the sampler.
    """
    theta0 = initial.theta
    if theta0.horizon < n_steps + 1:
        raise HorizonExhausted(
            f"horizon {theta0.horizon} < steps+1 = {n_steps + 1}")
    states = policy.param_states
    if states is None:
        return _simulate_generic(initial, policy, n_paths, n_steps, seed)

    grid = theta0.grid
    models = [build_model(pv) for pv in states]
    model0 = models[0]
    pin = model0.default_pin
    sigma_models = None
    if flip_rho_sign:
        if not hasattr(states[0], "rho"):
            raise ValueError("flip_rho_sign requires a model with rho")
        sigma_models = [build_model(replace(pv, rho=-pv.rho)) for pv in states]
    H0 = theta0.horizon
    tabs = _state_tables(models, grid, H0, pin, alpha_scale, sigma_models)
    alpha_tab, beta_tab, sigma_tab, dphi_pin, dpsi_pin, pin_idx = tabs
    w = 1j * pin

    s0 = None
    for i, pv in enumerate(states):
        if pv == initial.params:
            s0 = i
    if s0 is None:
        raise ValueError("initial parameters must be one of the policy states")

    T = n_steps
    dps = model0.draws_per_step
    ups = policy.uniforms_per_step
    Z = np.empty((n_paths, T + 1))
    Y = np.empty((n_paths, T + 1))
    state_path = np.empty((n_paths, T + 1), dtype=np.int16)
    c0_path = np.empty((n_paths, T))
    failed = np.zeros(n_paths, dtype=bool)
    theta_rec = None
    if record_theta and n_paths == 1:
        theta_rec = np.empty((T + 1, grid.n_points, record_theta),
                             dtype=np.complex128)

    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        nc = hi - lo
        normals = np.empty((nc, T, dps))
        uniforms = np.empty((nc, T, max(ups, 1)))
        for i in range(nc):
            gen = path_rng(seed, lo + i)
            normals[i] = gen.normal(size=(T, dps))
            uniforms[i] = gen.random(size=(T, max(ups, 1)))
        z = np.full(nc, initial.Z, dtype=np.float64)
        y = np.full(nc, initial.Y, dtype=np.float64)
        sidx = np.full(nc, s0, dtype=np.int64)
        theta_c = np.broadcast_to(theta0.values, (nc,) + theta0.values.shape)
        theta_c = np.ascontiguousarray(theta_c)
        Z[lo:hi, 0] = z
        Y[lo:hi, 0] = y
        state_path[lo:hi, 0] = sidx
        if theta_rec is not None:
            theta_rec[0] = theta_c[0, :, :record_theta]
        bad = np.zeros(nc, dtype=bool)
        for t in range(T):
            c_cplx = (theta_c[:, pin_idx, 0]
                      - (dphi_pin[sidx, 0] + dpsi_pin[sidx, 0] * y)) / w
            bad |= ~np.isfinite(c_cplx.real) | (np.abs(c_cplx.imag) > _C_IM_TOL)
            c0 = np.where(bad, 0.0, c_cplx.real)
            z2 = np.empty(nc)
            y2 = np.empty(nc)
            for s, model in enumerate(models):
                mask = sidx == s
                if np.any(mask):
                    z2[mask], y2[mask] = model.one_step(
                        z[mask], y[mask], c0[mask], normals[mask, t, :])
            theta_c = backend.crc_surface_step(
                theta_c, alpha_tab, beta_tab, sigma_tab, sidx, y, y2 - y)
            z, y = z2, y2
            bad |= ~np.isfinite(z) | ~np.isfinite(y)
            # recalibration: propose, verify the samplable witness, fallback
            cand = policy.next_state_vec(sidx, t + 1, uniforms[:, t, 0]) \
                if ups else sidx
            cand = np.asarray(cand, dtype=np.int64)
            cand_c = (theta_c[:, pin_idx, 0]
                      - (dphi_pin[cand, 0] + dpsi_pin[cand, 0] * y)) / w
            admissible = (np.isfinite(cand_c.real)
                          & (np.abs(cand_c.imag) <= _C_IM_TOL))
            sidx = np.where(admissible, cand, sidx)
            Z[lo:hi, t + 1] = z
            Y[lo:hi, t + 1] = y
            state_path[lo:hi, t + 1] = sidx
            c0_path[lo:hi, t] = c0
            if theta_rec is not None:
                theta_rec[t + 1] = theta_c[0, :, :record_theta]
        failed[lo:hi] = bad

    return PathEnsemble(
        Z=Z, Y=Y, state_idx=state_path, params_list=list(states),
        failed=failed, theta0=theta0, seed=seed, model_name=model0.name,
        theta_path=theta_rec, c0_path=c0_path,
        meta={
            "n_paths": n_paths, "n_steps": n_steps,
            "rng": "philox4x64 jumped per path_index, key=seed",
            "alpha_scale": alpha_scale, "flip_rho_sign": flip_rho_sign,
        },
    )


def _simulate_generic(initial, policy, n_paths, n_steps, seed):
    """Scalar-step fallback for policies without a finite state table."""
    Z = np.empty((n_paths, n_steps + 1))
    Y = np.empty((n_paths, n_steps + 1))
    failed = np.zeros(n_paths, dtype=bool)
    params_seen = []
    state_path = np.full((n_paths, n_steps + 1), -1, dtype=np.int16)

    def _state_of(pv):
        for i, q in enumerate(params_seen):
            if q == pv:
                return i
        params_seen.append(pv)
        return len(params_seen) - 1

    for p in range(n_paths):
        rng = path_rng(seed, p)
        st = initial
        Z[p, 0], Y[p, 0] = st.Z, st.Y
        state_path[p, 0] = _state_of(st.params)
        for t in range(n_steps):
            try:
                st = crc_step(st, policy, rng)
            except (AdmissibilityExhausted, Unsolvable):
                failed[p] = True
                Z[p, t + 1 :] = np.nan
                Y[p, t + 1 :] = np.nan
                break
            Z[p, t + 1], Y[p, t + 1] = st.Z, st.Y
            state_path[p, t + 1] = _state_of(st.params)
    return PathEnsemble(
        Z=Z, Y=Y, state_idx=state_path, params_list=params_seen,
        failed=failed, theta0=initial.theta, seed=seed,
        model_name=build_model(initial.params).name,
        meta={"n_paths": n_paths, "n_steps": n_steps,
              "rng": "philox4x64 jumped per path_index, key=seed"},
    )
