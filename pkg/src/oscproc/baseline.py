"""Rolling-window Hilbert phase and circular error metrics."""
from __future__ import annotations

import numpy as np
from scipy.signal import hilbert

from .core import fold, wrap


def analytic_signal(window) -> np.ndarray:
    """Discrete analytic signal of the mean-removed window.

    The real part is the input minus its mean; the imaginary part is the
    discrete Hilbert transform (spectral method).
    """
    x = np.asarray(window, dtype=float).ravel()
    if x.size < 8:
        raise ValueError("window must contain at least 8 samples")
    return hilbert(x - x.mean())


def rolling_hilbert_phase(y, window: int = 100) -> np.ndarray:
    """Folded phase from centred windows of ``window`` samples.

    The phase at ``t`` is the angle of the analytic signal of
    ``y[t - window//2 : t - window//2 + window]`` at ``t``. Windows are
    shrunk (kept inside the series) near the edges.
    """
    y = np.asarray(y, dtype=float).ravel()
    T = y.size
    if window > T:
        raise ValueError("window longer than the series")
    window = max(int(window), 8)
    half = window // 2
    out = np.empty(T)
    for t in range(T):
        lo = max(0, t - half)
        hi = min(T, t - half + window)
        if hi - lo < 8:
            lo, hi = max(0, min(lo, T - 8)), min(T, max(hi, 8))
        z = analytic_signal(y[lo:hi])
        out[t] = np.angle(z[t - lo])
    return fold(out)


def circular_rmse(est, truth) -> float:
    """Root mean square of phase differences wrapped to ``[-pi, pi)``."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError("inputs must have equal length")
    return float(np.sqrt(np.mean(wrap(est - truth) ** 2)))
