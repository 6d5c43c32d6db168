"""CSV interchange formats and atomic artifact writes.

All numeric artifacts are CSV with headers; floats are written with %.17g
so equal doubles produce byte-identical files.
"""

import hashlib
import json
import os
import tempfile

import numpy as np
import pandas as pd

from crcterm.grids import UGrid
from crcterm.surfaces import CharSurface

_FMT = "%.17g"


def atomic_write_text(path, text):
    """Write text to path via a temp file + rename; never leaves partials."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table_text(header, columns):
    rows = np.stack([np.asarray(c, dtype=np.float64) for c in columns], axis=1)
    rows = rows + 0.0  # normalize -0.0
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_FMT % v for v in r))
    return "\n".join(lines) + "\n"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# surfaces


def surface_to_csv(surface, path, t=None):
    """Dump theta(u, x): columns re_u_1, im_u_1, x, re_theta, im_theta.

    Row order is grid-major (all maturities of the first grid point first).
    A t column is prepended when a time stamp is passed.
    """
    pts = surface.grid.points
    G, H = surface.values.shape
    u = np.repeat(pts, H)
    x = np.tile(np.arange(H), G)
    v = surface.values.ravel()
    cols = [u.real, u.imag, x, v.real, v.imag]
    header = ["re_u_1", "im_u_1", "x", "re_theta", "im_theta"]
    if t is not None:
        cols = [np.full(u.size, t)] + cols
        header = ["t"] + header
    atomic_write_text(path, _table_text(header, cols))


def surface_sequence_to_csv(values, grid, path, t0=0):
    """Dump a (T+1, G, K) surface sequence with an explicit t column."""
    values = np.asarray(values)
    T1, G, K = values.shape
    pts = grid.points
    t = np.repeat(np.arange(T1) + t0, G * K)
    u = np.tile(np.repeat(pts, K), T1)
    x = np.tile(np.arange(K), T1 * G)
    v = values.ravel()
    atomic_write_text(path, _table_text(
        ["t", "re_u_1", "im_u_1", "x", "re_theta", "im_theta"],
        [t, u.real, u.imag, x, v.real, v.imag]))


def _grid_from_u(u_complex):
    seen = []
    for z in u_complex:
        if not any(abs(z - w) < 1e-12 for w in seen):
            seen.append(z)
    real = sorted(z.real for z in seen if abs(z.imag) < 1e-12)
    imag = [z for z in seen if abs(z.imag) >= 1e-12]
    return UGrid(real_points=np.asarray(real),
                 imag_points=np.asarray(imag, dtype=np.complex128)), seen


def surface_from_csv(path):
    """Load a surface written by surface_to_csv."""
    df = pd.read_csv(path)
    u = df["re_u_1"].to_numpy() + 1j * df["im_u_1"].to_numpy()
    grid, order = _grid_from_u(u)
    H = int(df["x"].max()) + 1
    values = np.zeros((grid.n_points, H), dtype=np.complex128)
    vals = df["re_theta"].to_numpy() + 1j * df["im_theta"].to_numpy()
    xs = df["x"].to_numpy().astype(int)
    for z in order:
        sel = np.abs(u - z) < 1e-12
        values[grid.pin_index(z), xs[sel]] = vals[sel]
    return CharSurface(grid=grid, values=values)


def surface_sequence_from_csv(path):
    """Load a surface sequence; returns (values (T+1, G, K), grid, t0)."""
    df = pd.read_csv(path)
    u = df["re_u_1"].to_numpy() + 1j * df["im_u_1"].to_numpy()
    grid, order = _grid_from_u(u)
    ts = df["t"].to_numpy().astype(int)
    t0 = int(ts.min())
    T1 = int(ts.max()) - t0 + 1
    K = int(df["x"].max()) + 1
    values = np.zeros((T1, grid.n_points, K), dtype=np.complex128)
    vals = df["re_theta"].to_numpy() + 1j * df["im_theta"].to_numpy()
    xs = df["x"].to_numpy().astype(int)
    gi = np.empty(len(df), dtype=int)
    for z in order:
        gi[np.abs(u - z) < 1e-12] = grid.pin_index(z)
    values[ts - t0, gi, xs] = vals
    return values, grid, t0


# ---------------------------------------------------------------------------
# paths, flows, extensions


def paths_to_csv(ensemble, path, max_paths=None):
    """Per-path trajectories: path, t, Z, Y and the parameter components."""
    n = ensemble.n_paths if max_paths is None else min(max_paths, ensemble.n_paths)
    T1 = ensemble.n_steps + 1
    labels = ensemble.params_list[0].labels()
    pp = ensemble.params_path()[:n]
    cols = [np.repeat(np.arange(n), T1),
            np.tile(np.arange(T1), n),
            ensemble.Z[:n].ravel(), ensemble.Y[:n].ravel()]
    header = ["path", "t", "Z", "Y"] + list(labels)
    for j in range(pp.shape[2]):
        cols.append(pp[:, :, j].ravel())
    atomic_write_text(path, _table_text(header, cols))


def x_path_to_csv(z_values, path):
    atomic_write_text(path, _table_text(
        ["t", "X"], [np.arange(len(z_values)), np.asarray(z_values)]))


def x_path_from_csv(path):
    df = pd.read_csv(path)
    return df["X"].to_numpy(dtype=np.float64)


def flow_to_csv(model_name, flow, path):
    """phi/psi tables: model, re_u, im_u, re_v, im_v, k, phi and psi parts."""
    G, H1 = flow.phi.shape
    k = np.tile(np.arange(H1), G)
    u = np.repeat(flow.u, H1)
    v0 = np.repeat(flow.v, H1)
    phi = flow.phi.ravel()
    psi = flow.psi.ravel()
    header = ["re_u", "im_u", "re_v", "im_v", "k",
              "re_phi", "im_phi", "re_psi_1", "im_psi_1"]
    text = _table_text(header, [u.real, u.imag, v0.real, v0.imag, k,
                                phi.real, phi.imag, psi.real, psi.imag])
    lines = text.split("\n")
    lines[0] = "model," + lines[0]
    body = [lines[0]] + [f"{model_name}," + ln for ln in lines[1:] if ln]
    atomic_write_text(path, "\n".join(body) + "\n")


def c_vector_to_csv(ext, path):
    c = ext.mu.c
    atomic_write_text(path, _table_text(["k", "c"], [np.arange(c.size), c]))


def tabulated_mu_to_csv(ext, path):
    mu = ext.mu
    A, H = mu.values.shape
    s = np.repeat(mu.s_args, H)
    k = np.tile(np.arange(H), A)
    v = mu.values.ravel()
    atomic_write_text(path, _table_text(
        ["s", "k", "re_mu", "im_mu"], [s, k, v.real, v.imag]))


def _json_default(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)!r}")


def write_json(obj, path):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True,
                                       default=_json_default) + "\n")
