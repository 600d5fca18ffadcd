"""Inference for oscillation processes with a hidden phase.

Observations follow ``y_t = a_t f(phi_t) + b_t + eps_t``. The package offers
simulators, a Rao-Blackwellized particle filter with fixed-lag smoothing,
parametric and nonparametric Monte Carlo EM, identifiability tools and a
Hilbert-phase baseline.
"""
from ._backend import name as backend_name, set_backend, set_num_threads, use_backend
from .baseline import analytic_signal, circular_rmse, rolling_hilbert_phase
from .core import (ModelError, ModelParams, OscillationPattern, eval_pattern, fold,
                   simulate_gssm, simulate_phase_ar1, simulate_phase_rw, wrap)
from .em import em_fit, mstep
from .identifiability import (FourierPattern, basic_cycle, fourier_coeffs, kappa_sequence,
                              mc_autocov_check, repl, theoretical_autocov)
from .kalman import GaussState, kalman_filter
from .npem import KernelSpec, aligned_relative_l2, kernel_pattern_estimate, npem_fit
from .particle import ParticleCloud, init_cloud, run_rbps

__version__ = "0.1.0"

__all__ = [
    "FourierPattern", "GaussState", "KernelSpec", "ModelError", "ModelParams",
    "OscillationPattern", "ParticleCloud", "aligned_relative_l2", "analytic_signal",
    "backend_name", "basic_cycle", "circular_rmse", "em_fit", "eval_pattern", "fold",
    "fourier_coeffs", "init_cloud", "kalman_filter", "kappa_sequence",
    "kernel_pattern_estimate", "mc_autocov_check", "mstep", "npem_fit", "repl",
    "rolling_hilbert_phase", "run_rbps", "set_backend", "set_num_threads",
    "simulate_gssm", "simulate_phase_ar1", "simulate_phase_rw", "theoretical_autocov",
    "use_backend", "wrap",
]
