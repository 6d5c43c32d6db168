"""Command-line front end: riccati | fit-hw | simulate | calibrate | verify.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 check failure.
Every run writes its artifacts atomically and a manifest last.
"""

import argparse
import hashlib
import os
import sys
import time

import numpy as np

import crcterm
from crcterm import io as cio
from crcterm.calibrate import calibrate_pipeline
from crcterm.checks import (CheckReport, bond_consistency, crc_joint_cumulant,
                            drift_residual, exp_martingale_check,
                            fdr_projection_residual, martingale_mc,
                            short_end_residual)
from crcterm.config import parse_config
from crcterm.crc import (ConstantPolicy, RandomWalkPolicy, TwoStatePolicy,
                         alpha_drift, initial_crc_state, sigma_fields,
                         simulate_paths)
from crcterm.errors import (CrcTermError, ParseError, ValidationError)
from crcterm.hullwhite import (extract_mu_parametric, extract_mu_tabulated,
                               validate_inc)
from crcterm.laws import DecompositionTriple, IncrementLaw
from crcterm.models import build_model
from crcterm.riccati import affine_forward_surface, riccati_flow, semiflow_residual
from crcterm.surfaces import CharSurface

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

_DET_TOL = {"vasicek": 1e-12, "heston": 1e-9}


def _build_policy(cfg):
    if cfg.policy_name == "constant":
        return ConstantPolicy(cfg.params, **{k: v for k, v in
                                             cfg.policy_kwargs.items()
                                             if k == "max_retries"})
    if cfg.policy_name == "two_state":
        return TwoStatePolicy(cfg.params, cfg.params_b, **cfg.policy_kwargs)
    return RandomWalkPolicy(**cfg.policy_kwargs).bind(cfg.params)


def _build_theta0(cfg, model):
    if cfg.theta0_source == "self":
        return affine_forward_surface(model, cfg.y0, cfg.grid, cfg.horizon)
    return cio.surface_from_csv(cfg.theta0_source)


def _ensemble_surfaces(ens, grid):
    return [CharSurface(grid=grid, values=ens.theta_path[t], time_stamp=t)
            for t in range(ens.theta_path.shape[0])]


def _deterministic_checks(cfg, model, theta0, ext0):
    """Short-end, drift, semiflow and leaf-projection checks for a scenario."""
    tol = _DET_TOL.get(cfg.model_name, 1e-9)
    grid, y0 = cfg.grid, cfg.y0
    reports = []
    want = cfg.checks or ("short_end", "drift", "semiflow", "affine_reduction")
    c0 = ext0.c0 if ext0 is not None else 0.0

    if "short_end" in want:
        w = 1j * grid.points
        kappa = np.array([model.F(wi, 0.0) + model.R_C(wi, 0.0) * y0
                          + wi * c0 for wi in w], dtype=np.complex128)
        reports.append(short_end_residual(theta0, kappa, tol=tol))

    if "drift" in want:
        H = min(theta0.horizon - 1, 12)
        alpha = alpha_drift(cfg.params, y0, grid, H)
        if cfg.alpha_scale != 1.0:
            alpha = alpha.with_values(alpha.values * cfg.alpha_scale)
        sig_params = cfg.params
        if cfg.flip_rho_sign and hasattr(cfg.params, "rho"):
            from dataclasses import replace
            sig_params = replace(cfg.params, rho=-cfg.params.rho)
        sig = sigma_fields(sig_params, grid, H)[0]
        zero = CharSurface(grid=grid,
                           values=np.zeros((grid.n_points, H), complex))
        trip = DecompositionTriple(alpha=alpha, sigmas=[zero, sig],
                                   epsilon_law=IncrementLaw(kind="continuous"))
        joint = crc_joint_cumulant(model, y0, c0=c0)
        reports.append(drift_residual(trip, joint, s=0, x=H - 1,
                                      tol=max(tol, 1e-9)))

    if "semiflow" in want:
        hor = min(theta0.horizon, 20)
        wu, wv = model.flow_pins(grid.points)
        flow = riccati_flow(model, wu, wv, hor)
        worst = 0.0
        for t in range(hor + 1):
            for st in range(t + 1):
                for r in range(st + 1):
                    pr, fr = semiflow_residual(flow, r, st, t)
                    worst = max(worst, pr, fr)
        reports.append(CheckReport(name="semiflow", max_residual=worst,
                                   tolerance=tol, passed=worst <= tol))
    return reports


def _mc_checks(cfg, ens, theta0):
    reports = []
    want = cfg.checks or ("martingale", "bond")
    pins = theta0.grid.points
    if "martingale" in want:
        for t in cfg.check_ts:
            reports.append(martingale_mc(ens, theta0, pins, t,
                                         band=cfg.mc_band))
    if "bond" in want and theta0.grid.has_pin(1j):
        for t in cfg.check_ts:
            reports.append(bond_consistency(ens, theta0, t, band=cfg.mc_band))
    if "exp_martingale" in want and theta0.grid.has_pin(-1j):
        reports.append(exp_martingale_check(theta0))
    return reports


def _fdr_check(cfg, ens, grid):
    surfaces = _ensemble_surfaces(ens, grid)
    params_path = [ens.params_list[max(s, 0)]
                   for s in ens.state_idx[0, : len(surfaces)]]
    models = {i: build_model(p) for i, p in enumerate(ens.params_list)}
    c_path = []
    for t, srf in enumerate(surfaces):
        m = models[max(ens.state_idx[0, t], 0)]
        ext = extract_mu_parametric(m, srf, ens.Y[0, t])
        c_path.append(ext.mu.c)
    return fdr_projection_residual(surfaces, params_path, ens.Y[0],
                                   c_path=c_path)


class _Run:
    """Collects artifacts and check results, writes the manifest last."""

    def __init__(self, cfg, out_dir, command):
        self.cfg = cfg
        self.out = out_dir
        self.command = command
        self.t0 = time.time()
        self.outputs = []
        self.reports = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def finish(self, exit_code):
        manifest = {
            "command": self.command,
            "tool_version": crcterm.__version__,
            "backend": crcterm.BACKEND,
            "config_hash": hashlib.sha256(
                self.cfg.raw_text.encode()).hexdigest(),
            "rng": "philox4x64 jumped per path_index, key=seed",
            "seed": self.cfg.seed,
            "wall_clock_s": round(time.time() - self.t0, 3),
            "exit_code": exit_code,
            "outputs": {name: cio.sha256_file(os.path.join(self.out, name))
                        for name in self.outputs},
            "checks": [{"name": r.name, "residual": r.max_residual,
                        "tolerance": r.tolerance, "passed": r.passed}
                       for r in self.reports],
        }
        cio.write_json(manifest, os.path.join(self.out, "manifest.json"))
        return exit_code

    def write_report(self, name="report.txt"):
        lines = [r.line() for r in self.reports]
        ok = all(r.passed for r in self.reports)
        lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
        cio.atomic_write_text(self.path(name), "\n".join(lines) + "\n")
        return ok


def _cmd_riccati(cfg, run):
    model = build_model(cfg.params)
    wu, wv = model.flow_pins(cfg.grid.points)
    flow = riccati_flow(model, wu, wv, cfg.horizon)
    cio.flow_to_csv(cfg.model_name, flow, run.path("riccati.csv"))
    return EXIT_OK


def _cmd_fit_hw(cfg, run):
    model = build_model(cfg.params)
    if cfg.theta0_source == "self":
        raise ValidationError(["[init] theta0 must name a CSV surface for fit-hw"])
    nu0 = cio.surface_from_csv(cfg.theta0_source)
    ext_p = extract_mu_parametric(model, nu0, cfg.y0)
    cio.c_vector_to_csv(ext_p, run.path("extension_c.csv"))
    rep_p = validate_inc(ext_p)
    ext_t = extract_mu_tabulated(model, nu0, cfg.y0)
    cio.tabulated_mu_to_csv(ext_t, run.path("extension_mu.csv"))
    rep_t = validate_inc(ext_t)
    cio.write_json({
        "parametric": {"valid": bool(rep_p.valid), "margin": rep_p.margin,
                       "min_eig_per_time": rep_p.min_eigenvalues.tolist()},
        "tabulated": {"valid": bool(rep_t.valid), "margin": rep_t.margin,
                      "min_eig_per_time": rep_t.min_eigenvalues.tolist()},
    }, run.path("validity_report.json"))
    run.reports.append(CheckReport(
        name="inc_validity", max_residual=-min(rep_p.margin, rep_t.margin),
        tolerance=-validate_inc(ext_p).eig_tol,
        passed=bool(rep_p.valid and rep_t.valid)))
    return EXIT_OK if (rep_p.valid and rep_t.valid) else EXIT_CHECK


def _cmd_simulate(cfg, run):
    model = build_model(cfg.params)
    theta0 = _build_theta0(cfg, model)
    state = initial_crc_state(cfg.params, cfg.z0, cfg.y0, theta0)
    policy = _build_policy(cfg)
    ens = simulate_paths(state, policy, cfg.n_paths, cfg.n_steps, cfg.seed,
                         record_theta=cfg.record_theta,
                         alpha_scale=cfg.alpha_scale,
                         flip_rho_sign=cfg.flip_rho_sign)
    cio.paths_to_csv(ens, run.path("paths.csv"), max_paths=cfg.max_csv_paths)
    if ens.theta_path is not None:
        cio.surface_sequence_to_csv(ens.theta_path, cfg.grid,
                                    run.path("theta_path.csv"))
        cio.x_path_to_csv(ens.Z[0], run.path("x_path.csv"))
    if cfg.n_paths >= 100:
        run.reports.extend(_mc_checks(cfg, ens, theta0))
        ok = run.write_report("summary.txt")
    else:
        ok = True
        cio.atomic_write_text(
            run.path("summary.txt"),
            f"mc checks skipped ({cfg.n_paths} paths < 100)\n"
            f"failed paths: {int(ens.failed.sum())}\n")
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_verify(cfg, run):
    model = build_model(cfg.params)
    theta0 = _build_theta0(cfg, model)
    ext0 = extract_mu_parametric(model, theta0, cfg.y0)
    run.reports.extend(_deterministic_checks(cfg, model, theta0, ext0))

    state = initial_crc_state(cfg.params, cfg.z0, cfg.y0, theta0)
    policy = _build_policy(cfg)
    want = cfg.checks or ("martingale", "bond", "affine_reduction")
    if {"martingale", "bond"} & set(want):
        ens = simulate_paths(state, policy, cfg.n_paths, cfg.n_steps,
                             cfg.seed, alpha_scale=cfg.alpha_scale,
                             flip_rho_sign=cfg.flip_rho_sign)
        run.reports.extend(_mc_checks(cfg, ens, theta0))
    if "affine_reduction" in want:
        # leaf invariance is a constant-parameter property; run the recorded
        # path with the scenario's base parameters
        ens1 = simulate_paths(state, ConstantPolicy(cfg.params), 1,
                              cfg.n_steps, cfg.seed,
                              record_theta=max(2, theta0.horizon - cfg.n_steps),
                              alpha_scale=cfg.alpha_scale,
                              flip_rho_sign=cfg.flip_rho_sign)
        run.reports.append(_fdr_check(cfg, ens1, cfg.grid))
    ok = run.write_report()
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_calibrate(cfg, run):
    if not cfg.x_csv or not cfg.theta_csv:
        raise ValidationError(
            ["[calibrate] x_csv and theta_csv are required for calibrate"])
    x = cio.x_path_from_csv(cfg.x_csv)
    values, grid, _ = cio.surface_sequence_from_csv(cfg.theta_csv)
    res = calibrate_pipeline(x, (values, grid), cfg.params,
                             window=cfg.window, lag=cfg.lag,
                             n_windows=cfg.n_windows, refine=cfg.refine)
    y = res.y_hat
    cio.atomic_write_text(run.path("y_hat.csv"), "\n".join(
        ["t,y_hat"] + [f"{y.t0 + j},{v:.17g}" for j, v in
                       enumerate(y.values)]) + "\n")
    lines = ["t_start,t_end,a,b,c,rho,margin,feller_ok"]
    for (lo, hi), p, m, ok in zip(res.window_bounds, res.params_path,
                                  res.margins, res.feller_flags):
        lines.append(f"{lo},{hi},{p.a:.17g},{p.b:.17g},{p.c:.17g},"
                     f"{p.rho:.17g},{m:.17g},{int(ok)}")
    cio.atomic_write_text(run.path("a_hat.csv"), "\n".join(lines) + "\n")
    pg = res.params_global
    report = [
        f"a={pg.a:.6g} b={pg.b:.6g} c={pg.c:.6g} rho={pg.rho:.6g}",
        f"lambda_hat={res.b_estimate.lambda_hat:.4f} "
        f"blocks={res.b_estimate.n_blocks} "
        f"shape_residual={res.b_estimate.fit_residual:.3e}",
        f"reconstruction_error={res.diagnostics['reconstruction_error']:.3e}",
        f"margins_min={float(np.min(res.margins)):.3e}",
    ]
    margins_ok = bool(np.all(res.margins >= -1e-8))
    run.reports.append(CheckReport(
        name="lies_above_margins", max_residual=-float(np.min(res.margins)),
        tolerance=1e-8, passed=margins_ok))
    report.append(f"margins {'PASS' if margins_ok else 'FAIL'}")
    cio.atomic_write_text(run.path("calibration_report.txt"),
                          "\n".join(report) + "\n")
    return EXIT_OK if margins_ok else EXIT_CHECK


_COMMANDS = {
    "riccati": _cmd_riccati,
    "fit-hw": _cmd_fit_hw,
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "verify": _cmd_verify,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="crcterm",
        description="Discrete-time term-structure engine with consistent "
                    "recalibration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override [run] seed")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as f:
            text = f.read()
        cfg = parse_config(text)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        loc = f" (line {exc.line})" if exc.line else ""
        print(f"config parse error{loc}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print("config validation failed:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG

    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out or cfg.out_dir
    run = _Run(cfg, out_dir, args.command)
    try:
        code = _COMMANDS[args.command](cfg, run)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except CrcTermError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return run.finish(EXIT_NUMERIC)
    return run.finish(code)


if __name__ == "__main__":
    sys.exit(main())
