"""Command-line front end: simulate, smooth, fit and analyze.

Every command reads a JSON configuration (``--config``) that must carry an
explicit integer ``seed``, writes CSV files with a header row into ``--out``
and records a ``manifest.json`` with the resolved configuration, software
versions and output checksums. Exit codes: 0 success, 2 configuration or
I/O error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import _backend
from .baseline import circular_rmse, rolling_hilbert_phase
from .core import ModelError, ModelParams, OscillationPattern, eval_pattern, fold, simulate_gssm
from .em import em_fit
from .identifiability import (fourier_coeffs, kappa_sequence, mc_autocov_check, repl)
from .kalman import GaussState
from .npem import KernelSpec, npem_fit
from .particle import run_rbps
from .pipelines import (ROSSLER_T, ecg_init, ecg_pattern, rossler_data, rossler_params,
                        rossler_prior, simulate_ecg)

FLOAT_FMT = "%.17g"
MODE_ALIASES = {"cosine": "cosine", "parametric": "cosine", "nonparametric": "nonparametric"}
SMOOTH_DEFAULTS = {"cosine": (1000, 200), "nonparametric": (100, 10)}


class ConfigError(Exception):
    """Invalid or incomplete configuration, or an unusable path."""


class NumericError(Exception):
    """A computation produced non-finite output."""


# ---------------------------------------------------------------- CSV I/O

def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns with a header row; floats use ``%.17g``."""
    path = Path(path)
    names = list(columns)
    data = [np.asarray(columns[k], dtype=float).ravel() for k in names]
    n = {d.size for d in data}
    if len(n) > 1:
        raise ValueError("columns must have equal length")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(names) + "\n")
            if data and data[0].size:
                np.savetxt(fh, np.column_stack(data), fmt=FLOAT_FMT, delimiter=",")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def read_csv(path, required=()) -> dict:
    """Read a headed CSV into a dict of float columns."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            rows = [line for line in fh if line.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    names = [h.strip() for h in header.split(",")] if header else []
    for col in required:
        if col not in names:
            raise ConfigError(f"{path}: missing column {col!r}")
    if rows:
        arr = np.loadtxt(rows, delimiter=",", ndmin=2)
    else:
        arr = np.zeros((0, len(names)))
    return {k: arr[:, i].copy() for i, k in enumerate(names)}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, files) -> Path:
    import scipy

    from . import __version__

    manifest = {
        "command": command,
        "config": config,
        "seed": config["seed"],
        "versions": {"oscproc": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": sys.version.split()[0]},
        "backend": _backend.name(),
        "outputs": {Path(p).name: _sha256(p) for p in files},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- config helpers

def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _require(cfg, key, kind=None):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    val = cfg[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{key!r} must be an integer")
    return val


def _int(cfg, key, default):
    val = cfg.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{key!r} must be an integer")
    return val


def _mode(cfg) -> str:
    mode = cfg.get("mode", "cosine")
    if mode not in MODE_ALIASES:
        raise ConfigError(f"unknown mode {mode!r}")
    return MODE_ALIASES[mode]


def _params(cfg, key="params") -> ModelParams:
    try:
        return ModelParams.from_dict(_require(cfg, key))
    except KeyError as exc:
        raise ConfigError(f"{key}: missing field {exc.args[0]!r}") from exc
    except (ModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _pattern(spec, M=256) -> OscillationPattern:
    """``"cos"``, ``"ecg"``, ``"zero"`` or a CSV path with columns ``phi_grid, f``."""
    if spec == "cos":
        return OscillationPattern.from_function(np.cos, M)
    if spec == "ecg":
        return ecg_pattern(M)
    if spec == "zero":
        return OscillationPattern(np.zeros(M))
    cols = read_csv(spec, required=("phi_grid", "f"))
    try:
        return OscillationPattern(cols["f"])
    except ModelError as exc:
        raise ConfigError(f"{spec}: {exc}") from exc


def _observations(cfg) -> np.ndarray:
    cols = read_csv(_require(cfg, "observations"), required=("y",))
    return cols["y"]


def _prior(cfg, params: ModelParams):
    pr = cfg.get("prior")
    if pr is None:
        return None
    try:
        return GaussState(np.asarray(pr["mean"], float), np.asarray(pr["cov"], float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"prior: {exc}") from exc


def _without_baseline(params: ModelParams) -> ModelParams:
    """Cosine mode: the baseline is held at zero."""
    Q = params.Q.copy()
    Q[1, :] = Q[:, 1] = 0.0
    A = params.A.copy()
    A[1, :] = A[:, 1] = 0.0
    return params.replace(mu=np.array([params.mu[0], 0.0]), A=A, Q=Q)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise NumericError("non-finite values in the output")


def _trace_columns(trace, loglik) -> dict:
    n = len(trace)
    ll = np.full(n, np.nan)
    ll[: len(loglik)] = loglik
    return {
        "iteration": np.arange(n),
        "alpha": [p["alpha"] for p in trace],
        "beta": [p["beta"] for p in trace],
        "omega": [p["alpha"] / (1 - p["beta"]) for p in trace],
        "acd_shape": [p["acd_shape"] for p in trace],
        "sigma_eps2": [p["sigma_eps2"] for p in trace],
        "mu_a": [p["mu"][0] for p in trace],
        "mu_b": [p["mu"][1] for p in trace],
        "A_aa": [p["A"][0][0] for p in trace],
        "A_ab": [p["A"][0][1] for p in trace],
        "A_ba": [p["A"][1][0] for p in trace],
        "A_bb": [p["A"][1][1] for p in trace],
        "Q_aa": [p["Q"][0][0] for p in trace],
        "Q_ab": [p["Q"][0][1] for p in trace],
        "Q_bb": [p["Q"][1][1] for p in trace],
        "loglik": ll,
    }


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: dict, out: Path) -> list:
    """Observations ``(t, y)`` plus the hidden truth; ``scenario`` selects
    ``gssm`` (default), ``ecg`` or ``rossler``."""
    seed = cfg["seed"]
    scenario = cfg.get("scenario", "gssm")
    files = []
    if scenario == "rossler":
        T = _int(cfg, "T", ROSSLER_T)
        X, y, phase = rossler_data(float(cfg.get("noise_var", 40.0)), T, seed,
                                   float(cfg.get("dt", 0.1)))
        t = np.arange(1, T + 1)
        files.append(write_csv(out / "observations.csv", {"t": t, "y": y}))
        files.append(write_csv(out / "rossler.csv", {
            "t": t, "x1": X[:, 0], "x2": X[:, 1], "x3": X[:, 2], "y_noisy": y,
            "true_phase": phase}))
        return files
    T = _int(cfg, "T", 1000)
    if T < 0:
        raise ConfigError("'T' must be non-negative")
    M = _int(cfg, "M", 256)
    if scenario == "ecg":
        params = _params(cfg) if "params" in cfg else None
        kw = {"params": params} if params is not None else {}
        obs, hid, f = simulate_ecg(T, seed, M=M, **kw)
    elif scenario == "gssm":
        params = _params(cfg)
        f = _pattern(cfg.get("pattern", "cos"), M)
        try:
            obs, hid = simulate_gssm(params, f, T, seed)
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    t = np.arange(T + 1)
    files.append(write_csv(out / "observations.csv", {"t": t[1:], "y": obs.y}))
    files.append(write_csv(out / "hidden.csv", {"t": t, "phi": hid.phi, "psi": hid.psi,
                                                "a": hid.a, "b": hid.b}))
    files.append(write_csv(out / "pattern.csv", {"phi_grid": f.grid, "f": f.values}))
    return files


def cmd_smooth(cfg: dict, out: Path) -> list:
    """Fixed-lag smoothing with given parameters and pattern."""
    mode = _mode(cfg)
    y = _observations(cfg)
    params = _params(cfg)
    dN, dl = SMOOTH_DEFAULTS[mode]
    N, l = _int(cfg, "N", dN), _int(cfg, "l", dl)
    M = _int(cfg, "M", 256)
    prior = _prior(cfg, params)
    if mode == "cosine":
        f = _pattern(cfg.get("pattern", "cos"), M)
        params = _without_baseline(params)
        if prior is None:
            prior = rossler_prior(params)
    else:
        f = _pattern(_require(cfg, "pattern"), M)
    sm = run_rbps(y, params, f, N, l, cfg["seed"], prior=prior)
    den = sm.a_hat * eval_pattern(f, sm.phi_hat) + sm.b_hat
    _check_finite(sm.phi_hat, sm.a_hat, sm.b_hat)
    t = np.arange(1, y.size + 1)
    return [write_csv(out / "smoothed.csv", {
        "t": t, "phi_hat": sm.phi_hat, "phi_hat_folded": sm.phi_folded, "a_hat": sm.a_hat,
        "b_hat": sm.b_hat, "ess": sm.ess, "y_denoised": den})]


def cmd_fit(cfg: dict, out: Path) -> list:
    """Parametric EM (cosine pattern) or nonparametric EM (pattern estimated)."""
    mode = _mode(cfg)
    y = _observations(cfg)
    seed = cfg["seed"]
    M = _int(cfg, "M", 256)
    files = []
    if mode == "cosine":
        N, l = _int(cfg, "N", 500), _int(cfg, "l", 50)
        iters = _int(cfg, "iters", 10)
        params = _without_baseline(_params(cfg) if "params" in cfg else rossler_params(y))
        f = _pattern(cfg.get("pattern", "cos"), M)
        prior = _prior(cfg, params) or rossler_prior(params)
        res = em_fit(y, params, f, N, l, iters, seed, prior=prior, q_mask=[False, True])
    else:
        N, l = _int(cfg, "N", 100), _int(cfg, "l", 10)
        iters = _int(cfg, "iters", 9)
        if "params" in cfg:
            params = _params(cfg)
        else:
            cycles = float(cfg.get("cycles", 11.0))
            if cycles <= 0:
                raise ConfigError("'cycles' must be positive")
            params = ecg_init(beta0=float(cfg.get("beta0", 0.1)), period=y.size / cycles)
        f0 = _pattern(cfg["pattern"], M) if "pattern" in cfg else None
        bw = cfg.get("bandwidth")
        spec = None
        if bw is not None:
            try:
                spec = KernelSpec(**bw) if isinstance(bw, dict) else KernelSpec(float(bw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bandwidth: {exc}") from exc
        res = npem_fit(y, params, f0, N, l, iters, spec=spec, seed=seed, M=M,
                       prior=_prior(cfg, params))
        grid = res.patterns[0].grid
        cols = {"phi_grid": grid}
        for m, fm in enumerate(res.patterns):
            cols[f"f_{m}"] = fm.values
        _check_finite(*(fm.values for fm in res.patterns))
        files.append(write_csv(out / "patterns.csv", cols))
    trace = res.trace + [res.params.to_dict()]
    cols = _trace_columns(trace, res.loglik)
    _check_finite(cols["alpha"], cols["sigma_eps2"])
    files.append(write_csv(out / "trace.csv", cols))
    pj = out / "params.json"
    pj.write_text(json.dumps(res.params.to_dict(), indent=2, sort_keys=True) + "\n",
                  encoding="utf-8")
    files.append(pj)
    return files


def cmd_analyze(cfg: dict, out: Path) -> list:
    """Autocovariance table, phase-error table and Fourier diagnostics.

    Each section runs only when its key is present: ``autocov`` (pattern,
    omega, sigma_eta, sigma_eps, T, lags), ``phase`` (smoothed CSV, truth CSV
    with ``true_phase`` and ``y_noisy`` or ``y``, window) and ``fourier``
    (pattern, K_max).
    """
    files = []
    seed = cfg["seed"]
    if "autocov" in cfg:
        ac = cfg["autocov"]
        M = _int(ac, "M", 256)
        K = _int(ac, "K_max", 16)
        fp = fourier_coeffs(_pattern(ac.get("pattern", "cos"), M), K)
        try:
            rep = mc_autocov_check(fp, float(_require(ac, "omega")),
                                   float(ac.get("sigma_eta", 0.1)),
                                   float(ac.get("sigma_eps", 0.5)), _int(ac, "T", 100_000),
                                   seed, range(1, _int(ac, "max_lag", 20) + 1))
        except (ModelError, ValueError) as exc:
            raise ConfigError(f"autocov: {exc}") from exc
        files.append(write_csv(out / "autocov.csv", {
            "lag": rep.lags, "sample": rep.sample, "theoretical": rep.theory, "se": rep.se,
            "z": rep.z}))
    if "phase" in cfg:
        ph = cfg["phase"]
        sm = read_csv(_require(ph, "smoothed"), required=("phi_hat_folded",))
        truth = read_csv(_require(ph, "truth"), required=("true_phase",))
        y = truth.get("y_noisy", truth.get("y"))
        if y is None:
            raise ConfigError(f"{ph['truth']}: missing column 'y_noisy'")
        hil = rolling_hilbert_phase(y, _int(ph, "window", 100))
        tp = truth["true_phase"]
        files.append(write_csv(out / "phase_error.csv", {
            "rmse_rbps": [circular_rmse(fold(sm["phi_hat_folded"]), tp)],
            "rmse_hilbert": [circular_rmse(hil, tp)]}))
        files.append(write_csv(out / "phases.csv", {
            "t": np.arange(1, tp.size + 1), "true_phase": tp,
            "rbps_phase": sm["phi_hat_folded"], "hilbert_phase": hil}))
    if "fourier" in cfg:
        fo = cfg["fourier"]
        M = _int(fo, "M", 256)
        fp = fourier_coeffs(_pattern(fo.get("pattern", "cos"), M), _int(fo, "K_max", 32))
        kap = kappa_sequence(fp, float(fo.get("tol", 1e-8)))
        r = repl(fp) if kap.size else 0
        k = np.arange(fp.K_max + 1)
        files.append(write_csv(out / "fourier.csv", {
            "k": k, "abs_c": np.abs(fp.positive), "in_kappa": np.isin(k, kap).astype(float),
            "repl": np.full(k.size, float(r))}))
    if not files:
        raise ConfigError("analyze needs at least one of 'autocov', 'phase', 'fourier'")
    return files


COMMANDS = {"simulate": cmd_simulate, "smooth": cmd_smooth, "fit": cmd_fit,
            "analyze": cmd_analyze}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oscproc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--mode", choices=["cosine", "nonparametric"],
                       help="pattern treatment for smooth and fit")
        s.add_argument("--threads", type=int, default=1, help="worker threads for kernels")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.mode is not None:
            cfg["mode"] = args.mode
        _require(cfg, "seed", int)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        _backend.set_num_threads(args.threads)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create {out}: {exc.strerror}") from exc
        with np.errstate(all="ignore"):
            files = COMMANDS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, files)
    except ConfigError as exc:
        print(f"oscproc: config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ModelError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"oscproc: numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
