"""Scenario configuration: flat key=value sections, fully validated.

The exact key set is documented in the README. Parsing collects every
violation instead of stopping at the first.
"""

import configparser
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from crcterm.errors import ParseError, ValidationError
from crcterm.grids import make_grid
from crcterm.models import HestonParams, VasicekParams

KNOWN_MODELS = ("vasicek", "heston")
KNOWN_POLICIES = ("constant", "two_state", "random_walk")

_PIN_TOKENS = {"i": 1j, "-i": -1j, "+i": 1j}


@dataclass
class ScenarioConfig:
    """Validated scenario: model, grid, initial data, policy, run controls."""

    model_name: str
    params: object
    grid: object
    z0: float
    y0: float
    theta0_source: str          # "self" or a CSV path
    horizon: int
    policy_name: str
    policy_kwargs: dict
    params_b: Optional[object]  # second state of a two-state policy
    seed: int
    n_paths: int
    n_steps: int
    out_dir: str = "out"
    max_csv_paths: int = 1000
    record_theta: int = 0
    checks: tuple = ()
    check_ts: tuple = (1, 5, 10)
    mc_band: float = 4.0
    mc_pins: Optional[tuple] = None
    alpha_scale: float = 1.0
    flip_rho_sign: bool = False
    window: int = 40
    lag: Optional[int] = None
    n_windows: int = 8
    refine: int = 2
    x_csv: Optional[str] = None
    theta_csv: Optional[str] = None
    raw_text: str = ""


def _get(cp, sec, key, default=None):
    if cp.has_option(sec, key):
        return cp.get(sec, key)
    return default


def _build_params(name, cp, sec, errors, suffix=""):
    def fval(key, default=None):
        raw = _get(cp, sec, key + suffix, default)
        if raw is None:
            errors.append(f"[{sec}] missing key '{key}{suffix}'")
            return None
        try:
            return float(raw)
        except ValueError:
            errors.append(f"[{sec}] {key}{suffix}={raw!r} is not a number")
            return None

    if name == "vasicek":
        a, b, s = fval("a"), fval("b"), fval("sigma")
        if None in (a, b, s):
            return None
        return VasicekParams(a=a, b=b, sigma=s)
    if name == "heston":
        a, b, c, rho = fval("a"), fval("b"), fval("c"), fval("rho")
        dt = fval("dt", "0.003968253968253968")
        sub_raw = _get(cp, sec, "substeps" + suffix, "2")
        try:
            sub = int(sub_raw)
        except ValueError:
            errors.append(f"[{sec}] substeps={sub_raw!r} is not an integer")
            sub = None
        if None in (a, b, c, rho, dt, sub):
            return None
        try:
            return HestonParams(a=a, b=b, c=c, rho=rho, dt=dt, substeps=sub)
        except ValueError as exc:
            errors.append(f"[{sec}] invalid parameters: {exc}")
            return None
    return None


def parse_config(text):
    """Parse and validate scenario text; raise with ALL violations listed.

    Raises:
        ParseError: malformed section/key syntax (with line number).
        ValidationError: one message per violated invariant.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(str(exc), line=line) from exc

    errors = []
    model_name = _get(cp, "model", "name", "")
    if model_name not in KNOWN_MODELS:
        errors.append(
            f"[model] unknown model {model_name!r}; known: {', '.join(KNOWN_MODELS)}")
        params = None
    else:
        params = _build_params(model_name, cp, "model", errors)

    # grid
    try:
        u_max = float(_get(cp, "grid", "u_max", "4.0"))
        n_points = int(_get(cp, "grid", "n_points", "17"))
    except ValueError:
        errors.append("[grid] u_max/n_points must be numeric")
        u_max, n_points = 4.0, 17
    pins_raw = _get(cp, "grid", "pins", "i,-i")
    pins = []
    for tok in [t.strip() for t in pins_raw.split(",") if t.strip()]:
        if tok in _PIN_TOKENS:
            pins.append(_PIN_TOKENS[tok])
        else:
            errors.append(f"[grid] unknown pin token {tok!r} (use i, -i)")
    grid = None
    if n_points % 2 == 0:
        errors.append(f"[grid] n_points={n_points} must be odd (0 on grid)")
    elif u_max <= 0:
        errors.append("[grid] u_max must be positive")
    else:
        grid = make_grid(u_max, n_points, pins=tuple(pins))

    # init
    try:
        z0 = float(_get(cp, "init", "z0", "0.0"))
        y0 = float(_get(cp, "init", "y0", "0.02"))
        horizon = int(_get(cp, "init", "horizon", "12"))
    except ValueError:
        errors.append("[init] z0/y0/horizon must be numeric")
        z0, y0, horizon = 0.0, 0.02, 12
    theta0_source = _get(cp, "init", "theta0", "self")

    # policy
    policy_name = _get(cp, "policy", "name", "constant")
    policy_kwargs = {}
    params_b = None
    if policy_name not in KNOWN_POLICIES:
        errors.append(
            f"[policy] unknown policy {policy_name!r}; known: {', '.join(KNOWN_POLICIES)}")
    if policy_name == "two_state" and model_name in KNOWN_MODELS:
        params_b = _build_params(model_name, cp, "policy", errors, suffix="2")
        try:
            policy_kwargs["switch_prob"] = float(
                _get(cp, "policy", "switch_prob", "0.25"))
        except ValueError:
            errors.append("[policy] switch_prob must be numeric")
        sp = policy_kwargs.get("switch_prob", 0.25)
        if not 0.0 <= sp <= 1.0:
            errors.append(f"[policy] switch_prob={sp} outside [0, 1]")
    if policy_name == "random_walk":
        try:
            policy_kwargs["rel_step"] = float(
                _get(cp, "policy", "rel_step", "0.05"))
        except ValueError:
            errors.append("[policy] rel_step must be numeric")
    try:
        policy_kwargs["max_retries"] = int(
            _get(cp, "policy", "max_retries", "32"))
    except ValueError:
        errors.append("[policy] max_retries must be an integer")

    # run
    seed_raw = _get(cp, "run", "seed", None)
    if seed_raw is None:
        errors.append("[run] seed is required (no implicit entropy)")
        seed = 0
    else:
        try:
            seed = int(seed_raw)
        except ValueError:
            errors.append(f"[run] seed={seed_raw!r} is not an integer")
            seed = 0
    try:
        n_paths = int(_get(cp, "run", "paths", "1000"))
        n_steps = int(_get(cp, "run", "steps", "10"))
    except ValueError:
        errors.append("[run] paths/steps must be integers")
        n_paths, n_steps = 1000, 10
    if horizon < n_steps + 1:
        errors.append(
            f"[init] horizon={horizon} must be >= steps+1={n_steps + 1} "
            f"([run] steps={n_steps})")
    if n_paths < 1 or n_steps < 0:
        errors.append("[run] paths must be >= 1 and steps >= 0")

    # io / verify / corruption / calibrate
    out_dir = _get(cp, "io", "out_dir", "out")
    try:
        max_csv_paths = int(_get(cp, "io", "max_csv_paths", "1000"))
        record_theta = int(_get(cp, "io", "write_theta", "0"))
    except ValueError:
        errors.append("[io] max_csv_paths/write_theta must be integers")
        max_csv_paths, record_theta = 1000, 0
    checks = tuple(t.strip() for t in
                   _get(cp, "verify", "checks", "").split(",") if t.strip())
    ts_raw = _get(cp, "verify", "ts", None)
    try:
        if ts_raw is None:
            # default check times, clipped to the run length
            check_ts = tuple(t for t in (1, 5, 10) if t <= n_steps) \
                or (max(n_steps, 0),)
        else:
            check_ts = tuple(int(t) for t in ts_raw.split(","))
        mc_band = float(_get(cp, "verify", "mc_band", "4.0"))
    except ValueError:
        errors.append("[verify] ts must be integers and mc_band numeric")
        check_ts, mc_band = (1, 5, 10), 4.0
    for t in check_ts:
        if t > n_steps:
            errors.append(f"[verify] check time t={t} exceeds steps={n_steps}")
    try:
        alpha_scale = float(_get(cp, "corruption", "alpha_scale", "1.0"))
    except ValueError:
        errors.append("[corruption] alpha_scale must be numeric")
        alpha_scale = 1.0
    flip = _get(cp, "corruption", "flip_rho_sign", "false").strip().lower()
    flip_rho_sign = flip in ("1", "true", "yes", "on")
    try:
        window = int(_get(cp, "calibrate", "window", "40"))
        n_windows = int(_get(cp, "calibrate", "n_windows", "8"))
        refine = int(_get(cp, "calibrate", "refine", "2"))
        lag_raw = _get(cp, "calibrate", "lag", None)
        lag = int(lag_raw) if lag_raw is not None else None
    except ValueError:
        errors.append("[calibrate] window/lag/n_windows/refine must be integers")
        window, n_windows, refine, lag = 40, 8, 2, None

    if errors:
        raise ValidationError(errors)
    return ScenarioConfig(
        model_name=model_name, params=params, grid=grid, z0=z0, y0=y0,
        theta0_source=theta0_source, horizon=horizon,
        policy_name=policy_name, policy_kwargs=policy_kwargs,
        params_b=params_b, seed=seed, n_paths=n_paths, n_steps=n_steps,
        out_dir=out_dir, max_csv_paths=max_csv_paths,
        record_theta=record_theta, checks=checks, check_ts=check_ts,
        mc_band=mc_band, alpha_scale=alpha_scale,
        flip_rho_sign=flip_rho_sign, window=window, lag=lag,
        n_windows=n_windows, refine=refine,
        x_csv=_get(cp, "calibrate", "x_csv", None),
        theta_csv=_get(cp, "calibrate", "theta_csv", None),
        raw_text=text,
    )
