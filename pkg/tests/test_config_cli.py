import json
import os

import numpy as np
import pytest

from crcterm.cli import main
from crcterm.config import parse_config
from crcterm.errors import ParseError, ValidationError

MINIMAL = """
[model]
name = vasicek
a = 0.3
b = 0.012
sigma = 0.008

[run]
seed = 7
"""

SCENARIO = """
[model]
name = vasicek
a = 0.3
b = 0.012
sigma = 0.008

[grid]
u_max = 2.0
n_points = 9
pins = i,-i

[init]
z0 = 0.0
y0 = 0.02
theta0 = self
horizon = 9

[policy]
name = two_state
a2 = 0.5
b2 = 0.02
sigma2 = 0.012
switch_prob = 0.3

[run]
seed = 99
paths = 300
steps = 6

[verify]
ts = 1,3,6
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.model_name == "vasicek"
    assert cfg.grid.n_points == 17 + 2      # default grid plus two pins
    assert cfg.policy_name == "constant"
    assert cfg.seed == 7
    assert cfg.horizon >= cfg.n_steps + 1


def test_horizon_violation_names_both_fields():
    text = MINIMAL + "\n[init]\nhorizon = 5\n\n"
    text = text.replace("[run]\nseed = 7", "[run]\nseed = 7\nsteps = 10")
    with pytest.raises(ValidationError) as ei:
        parse_config(text)
    msg = " ".join(ei.value.violations)
    assert "horizon" in msg and "steps" in msg


def test_unknown_model_lists_known():
    with pytest.raises(ValidationError) as ei:
        parse_config(MINIMAL.replace("name = vasicek", "name = bogus"))
    assert "vasicek" in str(ei.value) and "heston" in str(ei.value)


def test_missing_seed_rejected():
    with pytest.raises(ValidationError) as ei:
        parse_config(MINIMAL.replace("seed = 7", ""))
    assert "seed" in str(ei.value)


def test_all_violations_collected():
    bad = MINIMAL.replace("name = vasicek", "name = bogus") \
                 .replace("seed = 7", "") + "\n[grid]\nn_points = 8\n"
    with pytest.raises(ValidationError) as ei:
        parse_config(bad)
    assert len(ei.value.violations) >= 3


def test_parse_error_has_line():
    with pytest.raises(ParseError):
        parse_config("not a section at all\n")


def test_feller_violation_reported():
    text = """
[model]
name = heston
a = 0.5
b = 0.01
c = 0.5
rho = -0.2

[run]
seed = 3
"""
    with pytest.raises(ValidationError) as ei:
        parse_config(text)
    assert "Feller" in str(ei.value)


# ---------------------------------------------------------------------------
# CLI


def _write(tmp_path, text, name="scen.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_config_error_exit(tmp_path, capsys):
    cfgfile = _write(tmp_path, MINIMAL.replace("seed = 7", ""))
    assert main(["verify", "--config", cfgfile]) == 2
    assert "seed" in capsys.readouterr().err


def test_cli_riccati(tmp_path):
    cfgfile = _write(tmp_path, SCENARIO)
    out = str(tmp_path / "out")
    assert main(["riccati", "--config", cfgfile, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "riccati.csv"))
    man = json.load(open(os.path.join(out, "manifest.json")))
    assert "riccati.csv" in man["outputs"]


def test_cli_simulate_deterministic(tmp_path):
    cfgfile = _write(tmp_path, SCENARIO)
    o1, o2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["simulate", "--config", cfgfile, "--out", o1]) == 0
    assert main(["simulate", "--config", cfgfile, "--out", o2]) == 0
    m1 = json.load(open(os.path.join(o1, "manifest.json")))
    m2 = json.load(open(os.path.join(o2, "manifest.json")))
    assert m1["outputs"] == m2["outputs"]
    # a different seed changes the artifacts
    o3 = str(tmp_path / "o3")
    assert main(["simulate", "--config", cfgfile, "--out", o3,
                 "--seed", "123456"]) == 0
    m3 = json.load(open(os.path.join(o3, "manifest.json")))
    assert m3["outputs"]["paths.csv"] != m1["outputs"]["paths.csv"]


def test_cli_verify_pass_and_corruption(tmp_path):
    cfgfile = _write(tmp_path, SCENARIO.replace("paths = 300", "paths = 20000"))
    out = str(tmp_path / "v")
    assert main(["verify", "--config", cfgfile, "--out", out]) == 0
    bad = SCENARIO.replace("paths = 300", "paths = 20000") \
        + "\n[corruption]\nalpha_scale = 1.1\n"
    cfg_bad = _write(tmp_path, bad, "bad.ini")
    outb = str(tmp_path / "vb")
    assert main(["verify", "--config", cfg_bad, "--out", outb]) == 4
    report = open(os.path.join(outb, "report.txt")).read()
    assert "FAIL" in report


def test_cli_fit_hw_roundtrip(tmp_path):
    from crcterm import io as cio
    from crcterm.models import VasicekParams, vasicek_model
    from crcterm.grids import make_grid
    from crcterm.riccati import affine_forward_surface

    g = make_grid(2.0, 9)
    target = affine_forward_surface(
        vasicek_model(VasicekParams(a=0.3, b=0.03, sigma=0.008)), 0.02, g, 9)
    curve = str(tmp_path / "curve.csv")
    cio.surface_to_csv(target, curve)
    text = SCENARIO.replace("theta0 = self", f"theta0 = {curve}")
    cfgfile = _write(tmp_path, text)
    out = str(tmp_path / "hw")
    assert main(["fit-hw", "--config", cfgfile, "--out", out]) == 0
    rep = json.load(open(os.path.join(out, "validity_report.json")))
    assert rep["parametric"]["valid"] and rep["tabulated"]["valid"]
    c = np.loadtxt(os.path.join(out, "extension_c.csv"),
                   delimiter=",", skiprows=1)
    assert c.shape == (9, 2)


def test_cli_calibrate_requires_inputs(tmp_path, capsys):
    cfgfile = _write(tmp_path, SCENARIO)
    assert main(["calibrate", "--config", cfgfile,
                 "--out", str(tmp_path / "c")]) == 2


def test_cli_calibrate_closed_loop_small(tmp_path):
    heston = """
[model]
name = heston
a = 3.0
b = 0.04
c = 0.4
rho = -0.6
substeps = 2

[grid]
u_max = 8.0
n_points = 17
pins = -i

[init]
y0 = 0.04
theta0 = self
horizon = 1220

[run]
seed = 41
paths = 1
steps = 1200

[io]
write_theta = 20

[calibrate]
window = 30
n_windows = 3
x_csv = {x}
theta_csv = {th}
"""
    out_s = str(tmp_path / "sim")
    text = heston.format(x=os.path.join(out_s, "x_path.csv"),
                         th=os.path.join(out_s, "theta_path.csv"))
    cfgfile = _write(tmp_path, text)
    assert main(["simulate", "--config", cfgfile, "--out", out_s]) == 0
    out_c = str(tmp_path / "cal")
    assert main(["calibrate", "--config", cfgfile, "--out", out_c]) == 0
    report = open(os.path.join(out_c, "calibration_report.txt")).read()
    assert "margins PASS" in report
    a_hat = np.loadtxt(os.path.join(out_c, "a_hat.csv"),
                       delimiter=",", skiprows=1)
    assert a_hat.shape[0] == 3
