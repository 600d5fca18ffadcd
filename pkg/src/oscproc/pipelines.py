"""Reference scenarios: a chaotic Rossler oscillator observed in noise and a
synthetic ECG-like series with a spiky pattern."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baseline import circular_rmse, rolling_hilbert_phase
from .core import (ModelParams, OscillationPattern, TWO_PI, eval_pattern, rossler_trajectory,
                   rossler_true_phase, simulate_gssm, wrap)
from .em import em_fit, spectral_omega
from .kalman import GaussState
from .npem import KernelSpec, aligned_relative_l2, npem_fit
from .particle import run_rbps

ROSSLER_X0 = (1.0, 1.0, 0.0)
ROSSLER_BURN_IN = 1000
ROSSLER_T = 1415

# (centre, height, width) of circular Gaussian bumps: P, Q, R, S and T waves
ECG_WAVES = (
    (-1.3, 0.15, 0.20),
    (-0.22, -0.12, 0.09),
    (0.0, 1.00, 0.12),
    (0.24, -0.22, 0.09),
    (1.7, 0.30, 0.35),
)


def ecg_template(phi):
    phi = np.asarray(phi, dtype=float)
    out = np.zeros_like(phi)
    for c, h, s in ECG_WAVES:
        out += h * np.exp(-0.5 * (wrap(phi - c) / s) ** 2)
    return out


def ecg_pattern(M: int = 256) -> OscillationPattern:
    return OscillationPattern.from_function(ecg_template, M)


ECG_TRUTH = ModelParams(alpha=0.063, beta=0.1, sigma_eps2=0.05 ** 2, mu=(1.0, 0.0),
                        Q=np.diag([1e-7, 1e-7]), pattern_known=False)


def ecg_init(beta0: float = 0.1, period: float = 90.0, sigma_eps2: float = 0.1,
             q0: float = 1e-5) -> ModelParams:
    """Starting values: ``beta0 = 0.1`` and ``alpha0 = (1 - beta0) 2 pi / period``."""
    return ModelParams(alpha=(1 - beta0) * TWO_PI / period, beta=beta0, sigma_eps2=sigma_eps2,
                       mu=(1.0, 0.0), Q=np.diag([q0, q0]), pattern_known=False)


def simulate_ecg(T: int = 1000, seed: int = 0, params: ModelParams = ECG_TRUTH, M: int = 256):
    f = ecg_pattern(M)
    obs, hidden = simulate_gssm(params.replace(pattern_known=True), f, T, seed)
    return obs, hidden, f


#: pattern bandwidth for the ECG scenario; the rule of thumb is far too wide
#: for the narrow R wave
ECG_BANDWIDTH = 0.03


def fit_ecg(y, N: int = 100, l: int = 10, iters: int = 9, seed: int = 1, spec=None,
            init: ModelParams | None = None, M: int = 256, callback=None):
    """Nonparametric EM from ``f = 0`` with the default ECG starting values."""
    init = init or ecg_init()
    spec = spec or KernelSpec(ECG_BANDWIDTH)
    return npem_fit(y, init, None, N, l, iters, spec=spec, seed=seed, M=M, callback=callback)


@dataclass
class EcgReport:
    errors: list
    result: object
    truth: OscillationPattern
    hidden: object

    @property
    def final_error(self) -> float:
        return self.errors[-1]


def run_ecg(data_seed: int = 0, fit_seed: int = 1, T: int = 1000, N: int = 100, l: int = 10,
            iters: int = 9, spec=None, M: int = 256) -> EcgReport:
    """Simulate the ECG-like series and fit it; ``errors[m]`` is the aligned
    relative L2 error of the pattern after iteration ``m``."""
    obs, hidden, f = simulate_ecg(T, data_seed, M=M)
    errors = []
    res = fit_ecg(obs.y, N, l, iters, fit_seed, spec=spec, M=M,
                  callback=lambda m, p, fh, sm: errors.append(aligned_relative_l2(fh, f)))
    return EcgReport(errors, res, f, hidden)


# ------------------------------------------------------------------ Rossler

def rossler_data(noise_var: float = 40.0, T: int = ROSSLER_T, seed: int = 0, dt: float = 0.1):
    """Rossler ``x1`` on an RK4 grid plus Gaussian noise, and the true folded phase."""
    X = rossler_trajectory(ROSSLER_X0, T, dt=dt, burn_in=ROSSLER_BURN_IN)
    rng = np.random.default_rng(seed)
    y = X[:, 0] + rng.normal(0.0, np.sqrt(noise_var), size=T)
    return X, y, rossler_true_phase(X[:, 0], X[:, 1])


def rossler_params(y, noise_var_guess: float | None = None, q_a: float = 1e-2) -> ModelParams:
    """Cosine-model starting values from the data: spectral-peak ``omega``,
    amplitude from the peak power and the remaining variance as noise."""
    w0 = spectral_omega(y)
    beta0 = 0.1
    yc = y - y.mean()
    n = yc.size
    k = np.arange(n)
    # least-squares amplitude of the peak sinusoid
    X = np.column_stack([np.cos(w0 * k), np.sin(w0 * k)])
    coef, *_ = np.linalg.lstsq(X, yc, rcond=None)
    amp = float(np.hypot(*coef))
    s2 = noise_var_guess if noise_var_guess is not None else max(np.var(yc) - amp ** 2 / 2, 1e-3)
    return ModelParams(alpha=(1 - beta0) * w0, beta=beta0, sigma_eps2=float(s2),
                       mu=(amp, 0.0), A=np.diag([1.0, 0.0]), Q=np.diag([q_a, 0.0]))


def rossler_prior(params: ModelParams) -> GaussState:
    return GaussState(params.mu, np.diag([params.mu[0] ** 2 / 4.0, 0.0]))


@dataclass
class RosslerReport:
    rmse_rbps: float
    rmse_hilbert: float
    rmse_denoised: float
    params: ModelParams
    phase_rbps: np.ndarray
    phase_hilbert: np.ndarray
    true_phase: np.ndarray
    denoised: np.ndarray
    x1: np.ndarray
    y: np.ndarray


def run_rossler(noise_var: float = 40.0, seed: int = 0, N: int = 1000, l: int = 200,
                em_iters: int = 20, em_N: int = 200, em_l: int = 50, window: int = 100,
                T: int = ROSSLER_T) -> RosslerReport:
    """Fit the cosine model by EM, smooth, and compare against the Hilbert phase.

    The baseline stays at zero (``A = diag(1, 0)``, ``Q_bb = 0``).
    """
    X, y, true_phase = rossler_data(noise_var, T, seed)
    p0 = rossler_params(y)
    cos = OscillationPattern.from_function(np.cos)
    prior = rossler_prior(p0)
    params = p0
    if em_iters > 0:
        fit = em_fit(y, p0, cos, em_N, em_l, em_iters, seed, prior=prior, fix_A=True,
                     q_mask=[False, True])
        params = fit.params.replace(mu=np.array([fit.params.mu[0], 0.0]))
    out = run_rbps(y, params, cos, N, l, seed, prior=rossler_prior(params))
    hil = rolling_hilbert_phase(y, window)
    den = out.a_hat * np.cos(out.phi_hat) + out.b_hat
    return RosslerReport(
        rmse_rbps=circular_rmse(out.phi_folded, true_phase),
        rmse_hilbert=circular_rmse(hil, true_phase),
        rmse_denoised=float(np.sqrt(np.mean((den - X[:, 0]) ** 2))),
        params=params, phase_rbps=out.phi_folded, phase_hilbert=hil, true_phase=true_phase,
        denoised=den, x1=X[:, 0], y=y)
