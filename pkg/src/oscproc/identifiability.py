"""Fourier tools for the identifiability of oscillation patterns.

A pattern is summarised by its Fourier coefficients ``c_k``. The positive
frequencies carrying non-zero coefficients form the kappa-sequence, whose gcd
is the number of times the pattern repeats itself within one cycle. The
closed-form autocovariance of ``y_t = f(phi_t) + eps_t`` under a Gaussian
random-walk phase is also provided, together with a Monte Carlo check.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from math import gcd

import numpy as np

from .core import ModelError, OscillationPattern, simulate_phase_rw


@dataclass(frozen=True)
class FourierPattern:
    """Coefficients ``c_k`` for ``k = -K_max, ..., K_max`` of a real pattern.

    ``coeffs[K_max + k]`` holds ``c_k``; conjugate symmetry
    ``c_{-k} = conj(c_k)`` is enforced on construction.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).ravel()
        if c.size % 2 != 1:
            raise ModelError("coefficient vector must have odd length 2*K_max + 1")
        K = c.size // 2
        pos = c[K:].copy()
        pos[0] = pos[0].real
        full = np.concatenate((np.conj(pos[:0:-1]), pos))
        full.setflags(write=False)
        object.__setattr__(self, "coeffs", full)

    @classmethod
    def from_positive(cls, pos) -> "FourierPattern":
        """Build from ``c_0, c_1, ..., c_K``."""
        pos = np.asarray(pos, dtype=complex).ravel()
        return cls(np.concatenate((np.conj(pos[:0:-1]), pos)))

    @property
    def K_max(self) -> int:
        return self.coeffs.size // 2

    @property
    def positive(self) -> np.ndarray:
        """``c_0, c_1, ..., c_{K_max}``."""
        return self.coeffs[self.K_max:]

    def c(self, k: int) -> complex:
        if abs(k) > self.K_max:
            return 0j
        return complex(self.coeffs[self.K_max + k])

    def __call__(self, x):
        """Evaluate the real trigonometric polynomial at ``x``."""
        x = np.asarray(x, dtype=float)
        pos = self.positive
        k = np.arange(1, pos.size)
        out = np.full(x.shape, pos[0].real)
        if k.size:
            out = out + 2.0 * np.real(np.exp(1j * np.multiply.outer(x, k)) @ pos[1:])
        return out if out.ndim else float(out)

    def to_pattern(self, M: int = 256) -> OscillationPattern:
        return OscillationPattern.from_function(self, M)


def fourier_coeffs(f: OscillationPattern, K_max: int) -> FourierPattern:
    """Coefficients ``c_k = (1/2pi) int f(x) exp(-ikx) dx`` by the M-point trapezoid rule.

    Exact for patterns band-limited below ``M/2``.
    """
    M = f.M
    if not (0 <= K_max < M / 2):
        raise ValueError("K_max must satisfy 0 <= K_max < M/2")
    c = np.fft.fft(f.values) / M
    return FourierPattern.from_positive(c[:K_max + 1])


def kappa_sequence(fp: FourierPattern, tol: float = 1e-8, relative: bool = True) -> np.ndarray:
    """Increasing positive frequencies ``k`` with ``|c_k| > tol``.

    With ``relative=True`` the threshold is ``tol * max_k |c_k|`` (all ``k``,
    including zero). A constant pattern yields an empty sequence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mag = np.abs(fp.positive)
    thr = tol * mag.max() if relative else tol
    if relative and mag.max() == 0:
        return np.zeros(0, dtype=np.int64)
    k = np.nonzero(mag[1:] > thr)[0] + 1
    return k.astype(np.int64)


def repl(fp: FourierPattern, tol: float = 1e-8) -> int:
    """Replication count: the largest ``l`` with ``c_k = 0`` for every ``k`` off ``l*Z``.

    Computed as the gcd of the kappa-sequence.
    """
    kap = kappa_sequence(fp, tol)
    if kap.size == 0:
        raise ModelError("replication undefined for constant f")
    return int(reduce(gcd, (int(k) for k in kap)))


def basic_cycle(fp: FourierPattern, tol: float = 1e-8) -> FourierPattern:
    """The pattern ``x -> f(x / d)`` with ``d = repl(f)``, i.e. ``c_k <- c_{kd}``."""
    d = repl(fp, tol)
    if d == 1:
        return fp
    pos = fp.positive[::d]
    return FourierPattern.from_positive(pos)


def dilate(fp: FourierPattern, gamma: int) -> FourierPattern:
    """The pattern ``x -> f(gamma x)``, i.e. ``c_{gamma k} <- c_k``."""
    gamma = int(gamma)
    if gamma < 1:
        raise ValueError("gamma must be a positive integer")
    pos = np.zeros(fp.K_max * gamma + 1, dtype=complex)
    pos[::gamma] = fp.positive
    return FourierPattern.from_positive(pos)


def theoretical_autocov(fp: FourierPattern, omega: float, sigma_eta2: float,
                        sigma_eps2: float, lags) -> np.ndarray:
    """Autocovariance of ``y_t = f(phi_t) + eps_t`` with ``phi_t - phi_{t-1} ~ N(omega, sigma_eta2)``.

    ``Gamma(l) = 2 sum_k |c_k|^2 cos(k l omega) exp(-l k^2 sigma_eta2 / 2)`` for
    ``l >= 1`` and ``Gamma(0) = sigma_eps2 + 2 sum_k |c_k|^2``. The series is
    truncated at ``K_max``; the omitted tail is bounded by ``2 sum_{k > K_max} |c_k|^2``.
    """
    lags = np.abs(np.asarray(lags, dtype=np.int64))
    pos = fp.positive
    k = np.arange(1, pos.size, dtype=float)
    p = np.abs(pos[1:]) ** 2
    ell = lags[:, None].astype(float)
    damp = np.exp(-0.5 * ell * k ** 2 * sigma_eta2)
    out = 2.0 * (p * np.cos(k * ell * omega) * damp).sum(axis=1)
    return out + np.where(lags == 0, sigma_eps2, 0.0)


@dataclass
class AutocovReport:
    lags: np.ndarray
    sample: np.ndarray
    theory: np.ndarray
    se: np.ndarray
    z: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def simulate_identifiability(fp: FourierPattern, omega: float, sigma_eta: float,
                             sigma_eps: float, T: int, seed: int) -> np.ndarray:
    """``y_t = f(phi_t) + eps_t`` for ``t = 1..T`` with a uniform random start phase."""
    phi = simulate_phase_rw(omega, sigma_eta, T, seed)[1:]
    rng = np.random.default_rng([seed, 1])
    pos = fp.positive
    y = np.full(T, pos[0].real)
    for k in range(1, pos.size):
        if pos[k] != 0:
            y += 2.0 * np.real(pos[k] * np.exp(1j * k * phi))
    return y + sigma_eps * rng.standard_normal(T)


def sample_autocov(y, lags) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    d = y - y.mean()
    T = d.size
    return np.array([np.dot(d[:T - l], d[l:]) / T for l in np.asarray(lags, dtype=np.int64)])


def mc_autocov_check(fp: FourierPattern, omega: float, sigma_eta: float, sigma_eps: float,
                     T: int = 100_000, seed: int = 0, lags=range(1, 21),
                     n_batches: int = 20) -> AutocovReport:
    """Compare sample autocovariances against the closed form.

    Standard errors come from batch means of the lagged products
    ``(y_t - ybar)(y_{t+l} - ybar)`` over ``n_batches`` contiguous blocks.
    """
    if T < 10_000:
        raise ValueError("T must be at least 1e4")
    lags = np.asarray(list(lags), dtype=np.int64)
    y = simulate_identifiability(fp, omega, sigma_eta, sigma_eps, T, seed)
    d = y - y.mean()
    n = T - int(lags.max())
    sample = np.empty(lags.size)
    se = np.empty(lags.size)
    for i, l in enumerate(lags):
        prod = d[:n] * d[l:l + n]
        sample[i] = np.dot(d[:T - l], d[l:]) / T
        bm = prod[: n - n % n_batches].reshape(n_batches, -1).mean(axis=1)
        se[i] = bm.std(ddof=1) / np.sqrt(n_batches)
    theory = theoretical_autocov(fp, omega, sigma_eta ** 2, sigma_eps ** 2, lags)
    return AutocovReport(lags, sample, theory, se, (sample - theory) / se)
