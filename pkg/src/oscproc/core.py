"""Model types and simulators for oscillation processes.

The observation model is

    y_t = a_t f(phi_t) + b_t + eps_t

with a hidden, strictly increasing phase ``phi_t`` whose increments follow an
ACD(1,0) recursion, a Gaussian VAR(1) for the amplitude/baseline pair
``(a_t, b_t)`` and a 2*pi-periodic oscillation pattern ``f``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * np.pi

#: default Gamma shape of the ACD innovations (coefficient of variation 0.1)
DEFAULT_ACD_SHAPE = 100.0


class ModelError(ValueError):
    """Raised for parameter values outside the admissible model space."""


def fold(phi):
    """Fold phases into ``[0, 2*pi)``."""
    out = np.mod(phi, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def wrap(d):
    """Map phase differences into ``[-pi, pi)``."""
    return d - TWO_PI * np.floor((d + np.pi) / TWO_PI)


@dataclass(frozen=True)
class ModelParams:
    """Static parameters of the oscillation state space model.

    Attributes
    ----------
    alpha, beta : float
        ACD intercept and slope; ``alpha > 0``, ``0 <= beta < 1`` and
        ``alpha < pi * (1 - beta)``.
    acd_shape : float
        Gamma shape ``nu`` of the unit-mean innovations.
    sigma_eps2 : float
        Observation noise variance.
    mu : ndarray, shape (2,)
        Long-run mean of ``(a_t, b_t)``.
    A, Q : ndarray, shape (2, 2)
        VAR(1) transition and innovation covariance.
    pattern_known : bool
        If False, ``mu`` is pinned to ``(1, 0)``.
    """

    alpha: float
    beta: float
    acd_shape: float = DEFAULT_ACD_SHAPE
    sigma_eps2: float = 1.0
    mu: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    Q: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-4]))
    pattern_known: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(2))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float).reshape(2, 2))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float).reshape(2, 2))
        self.validate()

    def validate(self):
        if not (self.alpha > 0):
            raise ModelError(f"alpha must be positive, got {self.alpha}")
        if not (0 <= self.beta < 1):
            raise ModelError(f"beta must lie in [0, 1), got {self.beta}")
        if not (self.alpha < np.pi * (1 - self.beta)):
            raise ModelError("alpha must be below pi * (1 - beta)")
        if not (self.acd_shape > 0):
            raise ModelError("acd_shape must be positive")
        if not (self.sigma_eps2 > 0):
            raise ModelError("sigma_eps2 must be positive")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ModelError("Q must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-10:
            raise ModelError("Q must be positive semi-definite")
        if not self.pattern_known and not np.array_equal(self.mu, [1.0, 0.0]):
            raise ModelError("mu must equal (1, 0) when the pattern is estimated")

    @property
    def omega(self) -> float:
        return mean_phase_increment(self)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "acd_shape": float(self.acd_shape),
            "sigma_eps2": float(self.sigma_eps2),
            "mu": self.mu.tolist(),
            "A": self.A.tolist(),
            "Q": self.Q.tolist(),
            "pattern_known": bool(self.pattern_known),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        kw = {k: d[k] for k in ("alpha", "beta")}
        for k in ("acd_shape", "sigma_eps2", "mu", "A", "Q", "pattern_known"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)


class OscillationPattern:
    """A 2*pi-periodic function sampled on a uniform grid.

    Evaluation interpolates linearly between the two grid nodes neighbouring
    ``phi mod 2*pi``.
    """

    def __init__(self, values):
        values = np.array(values, dtype=float)
        if values.ndim != 1 or values.size < 4:
            raise ModelError("pattern needs a 1-d grid with at least 4 nodes")
        if not np.all(np.isfinite(values)):
            raise ModelError("pattern values must be finite")
        self.values = values
        self.values.setflags(write=False)

    @property
    def M(self) -> int:
        return self.values.size

    @property
    def grid(self) -> np.ndarray:
        return TWO_PI * np.arange(self.M) / self.M

    @classmethod
    def from_function(cls, func, M: int = 256) -> "OscillationPattern":
        return cls(func(TWO_PI * np.arange(M) / M))

    def __call__(self, phi):
        return eval_pattern(self, phi)

    def __repr__(self):
        return f"OscillationPattern(M={self.M})"


def eval_pattern(f: OscillationPattern, phi):
    """Evaluate ``f`` at arbitrary (unfolded) phases by periodic linear interpolation."""
    M = f.M
    x = fold(np.asarray(phi, dtype=float)) * (M / TWO_PI)
    # snap roundoff at grid nodes so nodes evaluate to their stored value
    r = np.rint(x)
    x = np.where(np.abs(x - r) <= 8 * np.finfo(float).eps * np.maximum(r, 1.0), r, x)
    j = np.floor(x)
    frac = x - j
    j = j.astype(np.intp) % M
    v = f.values
    out = v[j] + frac * (v[(j + 1) % M] - v[j])
    return out if out.ndim else float(out)


@dataclass
class HiddenTrajectory:
    """Ground-truth path ``(phi_t, psi_t, a_t, b_t)`` for ``t = 0..T``."""

    phi: np.ndarray
    psi: np.ndarray
    a: np.ndarray
    b: np.ndarray


@dataclass
class ObservationSeries:
    y: np.ndarray
    sample_interval: float = 1.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not np.all(np.isfinite(self.y)):
            raise ModelError("observations must be finite")

    def __len__(self):
        return self.y.size


@dataclass(frozen=True)
class RosslerState:
    x1: float
    x2: float
    x3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3])


def acd_step(psi_prev: float, params: ModelParams, eta: float) -> float:
    """One ACD(1,0) phase increment ``(alpha + beta * psi_prev) * eta``."""
    if not np.isfinite(eta):
        raise ModelError(f"non-finite innovation {eta!r}")
    if psi_prev < 0:
        raise ModelError("psi_prev must be non-negative")
    return (params.alpha + params.beta * psi_prev) * eta


def mean_phase_increment(params: ModelParams) -> float:
    """Stationary mean increment ``alpha / (1 - beta)``."""
    return params.alpha / (1.0 - params.beta)


def acd_innovations(rng: np.random.Generator, shape: float, size):
    """Unit-mean Gamma draws."""
    return rng.gamma(shape, 1.0 / shape, size=size)


def simulate_acd(params: ModelParams, T: int, rng: np.random.Generator, phi0=None):
    """Simulate ``(phi_t, psi_t)`` for ``t = 0..T`` from the ACD phase model."""
    eta = acd_innovations(rng, params.acd_shape, T)
    psi = np.empty(T + 1)
    psi[0] = mean_phase_increment(params)
    a, b = params.alpha, params.beta
    for t in range(1, T + 1):
        psi[t] = (a + b * psi[t - 1]) * eta[t - 1]
    if phi0 is None:
        phi0 = rng.uniform(0.0, TWO_PI)
    phi = phi0 + np.concatenate(([0.0], np.cumsum(psi[1:])))
    return phi, psi


def simulate_gssm(params: ModelParams, f: OscillationPattern, T: int, seed: int,
                  prior_cov=None):
    """Simulate observations and the hidden trajectory of the full model.

    ``(a_0, b_0)`` is drawn from ``N(mu, prior_cov)`` with ``prior_cov``
    defaulting to ``Q``. Returns ``(ObservationSeries, HiddenTrajectory)``;
    the trajectory includes time 0, the observations start at time 1.
    """
    if T < 0:
        raise ModelError("T must be non-negative")
    rng = np.random.default_rng(seed)
    phi, psi = simulate_acd(params, T, rng)
    P0 = params.Q if prior_cov is None else np.asarray(prior_cov, dtype=float)
    ab = np.empty((T + 1, 2))
    ab[0] = params.mu + _gauss(rng, P0)
    for t in range(1, T + 1):
        ab[t] = params.mu + params.A @ (ab[t - 1] - params.mu) + _gauss(rng, params.Q)
    eps = rng.normal(0.0, np.sqrt(params.sigma_eps2), size=T)
    y = ab[1:, 0] * eval_pattern(f, phi[1:]) + ab[1:, 1] + eps
    return ObservationSeries(y), HiddenTrajectory(phi, psi, ab[:, 0].copy(), ab[:, 1].copy())


def _gauss(rng, cov):
    # eigen-factorisation tolerates singular (e.g. zero) covariances
    w, v = np.linalg.eigh(cov)
    return v @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(2))


def simulate_phase_rw(omega: float, sigma_eta: float, T: int, seed: int, phi0=None):
    """Random-walk phase ``phi_t = phi_{t-1} + omega + sigma_eta * eta_t``."""
    if not (0 < omega < np.pi):
        raise ModelError("omega must lie in (0, pi)")
    if sigma_eta < 0:
        raise ModelError("sigma_eta must be non-negative")
    rng = np.random.default_rng(seed)
    if phi0 is None:
        phi0 = rng.uniform(0.0, TWO_PI)
    inc = omega + sigma_eta * rng.standard_normal(T)
    return phi0 + np.concatenate(([0.0], np.cumsum(inc)))


def simulate_phase_ar1(omega: float, beta_ar: float, sigma_eta: float, T: int, seed: int,
                       phi0=None):
    """Phase with AR(1) increments around ``omega``, started from stationarity."""
    if not (0 < omega < np.pi):
        raise ModelError("omega must lie in (0, pi)")
    if not (-1 < beta_ar < 1):
        raise ModelError("beta_ar must lie in (-1, 1)")
    rng = np.random.default_rng(seed)
    if phi0 is None:
        phi0 = rng.uniform(0.0, TWO_PI)
    z = rng.standard_normal(T + 1)
    dev = np.empty(T + 1)
    dev[0] = sigma_eta / np.sqrt(1 - beta_ar ** 2) * z[0]
    for t in range(1, T + 1):
        dev[t] = beta_ar * dev[t - 1] + sigma_eta * z[t]
    inc = omega + dev[1:]
    return phi0 + np.concatenate(([0.0], np.cumsum(inc)))


ROSSLER_COEFFS = (0.15, 0.4, 8.5)


def rossler_field(x, coeffs=ROSSLER_COEFFS):
    a, b, c = coeffs
    x1, x2, x3 = x
    return np.array([-x2 - x3, x1 + a * x2, b + x3 * (x1 - c)])


def rossler_rk4(state: RosslerState, dt: float) -> RosslerState:
    """One classical Runge-Kutta step of the Rossler system."""
    if not dt > 0:
        raise ModelError("dt must be positive")
    x = state.as_array()
    k1 = rossler_field(x)
    k2 = rossler_field(x + 0.5 * dt * k1)
    k3 = rossler_field(x + 0.5 * dt * k2)
    k4 = rossler_field(x + dt * k3)
    return RosslerState(*(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)))


def rossler_trajectory(x0, n: int, dt: float = 0.1, burn_in: int = 0) -> np.ndarray:
    """Integrate ``n`` recorded RK4 steps after ``burn_in`` discarded ones; shape (n, 3)."""
    s = RosslerState(*x0)
    for _ in range(burn_in):
        s = rossler_rk4(s, dt)
    out = np.empty((n, 3))
    for i in range(n):
        s = rossler_rk4(s, dt)
        out[i] = s.as_array()
    return out


def rossler_true_phase(x1, x2):
    """Quadrant-aware angle of ``(x1, x2)`` folded to ``[0, 2*pi)``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any((x1 == 0) & (x2 == 0)):
        raise ModelError("phase undefined at the origin")
    out = fold(np.arctan2(x2, x1))
    return out if out.ndim else float(out)
