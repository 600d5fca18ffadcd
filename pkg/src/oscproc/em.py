"""Monte Carlo EM for the static parameters.

The E-step is a fixed-lag smoother run; the M-step uses closed forms for the
noise variance and the VAR(1) block, and a simplex search for the ACD pair.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logit

from .core import ModelParams, OscillationPattern, eval_pattern
from .kalman import GaussState, sym_pinv2
from .particle import SmoothedStats, run_rbps

VAR_FLOOR = 1e-12


def _c(stats: SmoothedStats, f: OscillationPattern | None):
    return np.zeros_like(stats.phi) if f is None else eval_pattern(f, stats.phi)


def mstep_sigma_eps(stats: SmoothedStats, y, f: OscillationPattern | None = None, c=None):
    """Weighted mean of ``y^2 - 2 y C m + C S C^T`` with ``C = (f(phi), 1)``.

    Pass precomputed ``c = f(phi)`` values (shape ``(T, N)``) instead of ``f``
    to evaluate several patterns on the same statistics.
    """
    y = np.asarray(y, dtype=float).ravel()
    T = stats.T
    if c is None:
        c = _c(stats, f)
    S = stats.second_moment()
    cm = c * stats.mean[..., 0] + stats.mean[..., 1]
    cSc = c * c * S[..., 0, 0] + 2.0 * c * S[..., 0, 1] + S[..., 1, 1]
    val = float(np.sum(stats.w * (y[:, None] ** 2 - 2.0 * y[:, None] * cm + cSc)) / T)
    if val < VAR_FLOOR:
        if val < -1e-10:
            warnings.warn("negative noise variance estimate floored", RuntimeWarning,
                          stacklevel=2)
        val = VAR_FLOOR
    return val


def mstep_mu(stats: SmoothedStats, params: ModelParams | None = None):
    """Weighted time average of the smoothed means; ``(1, 0)`` when the
    pattern is estimated nonparametrically."""
    if params is not None and not params.pattern_known:
        return np.array([1.0, 0.0])
    return np.einsum("tn,tnk->k", stats.w, stats.mean) / stats.T


def var_moments(stats: SmoothedStats, mu):
    """Weighted sums ``(S11, S10, S00)`` of centred second moments.

    ``S10 = sum w (Sigma_{t,t-1} + (m_t - mu)(m_{t-1} - mu)^T)`` and likewise
    for the current and previous state.
    """
    mu = np.asarray(mu, dtype=float)
    d1 = stats.mean - mu
    d0 = stats.mean_prev - mu
    w = stats.w
    S11 = np.einsum("tn,tnij->ij", w, stats.cov) + np.einsum("tn,tni,tnj->ij", w, d1, d1)
    S10 = np.einsum("tn,tnij->ij", w, stats.cross) + np.einsum("tn,tni,tnj->ij", w, d1, d0)
    S00 = np.einsum("tn,tnij->ij", w, stats.cov_prev) + np.einsum("tn,tni,tnj->ij", w, d0, d0)
    return S11, S10, S00


def _psd(Q):
    Q = 0.5 * (Q + Q.T)
    lam, V = np.linalg.eigh(Q)
    if lam.min() >= 0:
        return Q
    return (V * np.clip(lam, 0.0, None)) @ V.T


def mstep_A_Q(stats: SmoothedStats, mu_new, fix_A=None, diag_Q: bool = False,
              q_mask=None):
    """Closed-form VAR(1) update.

    Parameters
    ----------
    fix_A : array_like, optional
        Hold ``A`` at this value; ``Q`` is then the exact maximiser given ``A``.
    diag_Q : bool
        Zero the off-diagonal of ``Q``.
    q_mask : array_like of bool, shape (2,), optional
        Components whose innovation variance is held at zero.
    """
    T = stats.T
    S11, S10, S00 = var_moments(stats, mu_new)
    if fix_A is None:
        inv, sing = sym_pinv2(S00)
        if sing:
            warnings.warn("singular state moment matrix; using pseudo-inverse",
                          RuntimeWarning, stacklevel=2)
        A = S10 @ inv
        Q = (S11 - A @ S10.T) / T
    else:
        A = np.asarray(fix_A, dtype=float)
        Q = (S11 - A @ S10.T - S10 @ A.T + A @ S00 @ A.T) / T
    Q = _psd(Q)
    if diag_Q:
        Q = np.diag(np.diag(Q))
    if q_mask is not None:
        keep = ~np.asarray(q_mask, dtype=bool)
        Q = Q * np.outer(keep, keep)
    return A, Q


def _acd_terms(stats_or_arrays):
    if isinstance(stats_or_arrays, SmoothedStats):
        s = stats_or_arrays
        w, psi, psi_prev = s.w.ravel(), s.psi.ravel(), s.psi_prev.ravel()
    else:
        w, psi, psi_prev = (np.asarray(a, dtype=float).ravel() for a in stats_or_arrays)
    keep = w > 0
    return w[keep], psi[keep], psi_prev[keep]


def acd_q_objective(alpha, beta, stats, acd_shape) -> float:
    """``sum w log p(psi_t | psi_{t-1})`` for the ACD transition.

    ``psi_t = s eta`` with ``s = alpha + beta psi_{t-1}`` and
    ``eta ~ Gamma(nu, 1/nu)``, so ``psi_t`` is Gamma with shape ``nu`` and
    scale ``s / nu``; the ``1/s`` Jacobian is included. ``stats`` is a
    :class:`SmoothedStats` or a ``(w, psi, psi_prev)`` triple.
    """
    w, psi, psi_prev = _acd_terms(stats)
    nu = float(acd_shape)
    s = alpha + beta * psi_prev
    if np.any(psi <= 0) or np.any(s <= 0):
        return -np.inf
    lp = (nu * np.log(nu) - gammaln(nu) + (nu - 1.0) * np.log(psi)
          - nu * np.log(s) - nu * psi / s)
    return float(w @ lp)


class AcdFit(NamedTuple):
    alpha: float
    beta: float
    acd_shape: float
    objective: float
    converged: bool


def _to_free(alpha, beta):
    u = logit(np.clip(beta, 1e-9, 1 - 1e-9))
    v = logit(np.clip(alpha / (np.pi * (1 - beta)), 1e-12, 1 - 1e-12))
    return u, v


def _from_free(u, v):
    beta = float(expit(u))
    alpha = float(np.pi * (1.0 - beta) * expit(v))
    return alpha, beta


def maximize_acd(stats, init, acd_shape, estimate_shape: bool = False,
                 maxiter: int = 500) -> AcdFit:
    """Maximise :func:`acd_q_objective` over the admissible ``(alpha, beta)``.

    Nelder-Mead on ``beta = expit(u)``, ``alpha = pi (1 - beta) expit(v)``
    (plus ``log nu`` if ``estimate_shape``). The returned point is never worse
    than ``init``.
    """
    a0, b0 = map(float, init)
    if not (a0 > 0 and 0 <= b0 < 1 and a0 < np.pi * (1 - b0)):
        raise ValueError("initial (alpha, beta) outside the admissible region")
    terms = _acd_terms(stats)
    f0 = acd_q_objective(a0, b0, terms, acd_shape)

    def neg(x):
        a, b = _from_free(x[0], x[1])
        nu = float(np.exp(x[2])) if estimate_shape else acd_shape
        if not (a > 0 and b < 1):
            return np.inf
        val = acd_q_objective(a, b, terms, nu)
        return -val if np.isfinite(val) else np.inf

    x0 = list(_to_free(a0, b0))
    if estimate_shape:
        x0.append(np.log(acd_shape))
    res = minimize(neg, np.array(x0), method="Nelder-Mead",
                   options={"maxiter": maxiter, "xatol": 1e-8, "fatol": 1e-10})
    a, b = _from_free(res.x[0], res.x[1])
    nu = float(np.exp(res.x[2])) if estimate_shape else float(acd_shape)
    val = -float(res.fun)
    if not (val >= f0 and a < np.pi * (1 - b) and a > 0):
        return AcdFit(a0, b0, float(acd_shape), f0, bool(res.success))
    return AcdFit(a, b, nu, val, bool(res.success))


@dataclass
class EMResult:
    params: ModelParams
    loglik: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    smoother: object = None


def mstep(stats: SmoothedStats, y, params: ModelParams, f, fix_A=True, diag_Q=False,
          q_mask=None, update_acd=True, estimate_shape=False, c=None) -> ModelParams:
    """All parametric updates from one set of smoothed statistics."""
    s2 = mstep_sigma_eps(stats, y, f, c=c)
    mu = mstep_mu(stats, params)
    pinned = params.A if fix_A is True else (None if fix_A is False else fix_A)
    A, Q = mstep_A_Q(stats, mu, fix_A=pinned, diag_Q=diag_Q, q_mask=q_mask)
    alpha, beta, nu = params.alpha, params.beta, params.acd_shape
    if update_acd:
        fit = maximize_acd(stats, (alpha, beta), nu, estimate_shape=estimate_shape)
        alpha, beta, nu = fit.alpha, fit.beta, fit.acd_shape
    return params.replace(sigma_eps2=s2, mu=mu, A=A, Q=Q, alpha=alpha, beta=beta,
                          acd_shape=nu)


def em_fit(y, params_init: ModelParams, f: OscillationPattern | None, N: int, l: int,
           iters: int, seed, prior: GaussState | None = None, fix_A=True,
           diag_Q: bool = False, q_mask=None, update_acd: bool = True,
           estimate_shape: bool = False, callback=None) -> EMResult:
    """Parametric Monte Carlo EM with a known pattern ``f``.

    Every E-step reuses ``seed`` (common random numbers), so successive
    log-likelihood estimates differ only through the parameters.
    ``loglik[m]`` is the evidence estimate at the parameters entering
    iteration ``m``; ``trace[m]`` holds those parameters.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    y = np.asarray(getattr(y, "y", y), dtype=float).ravel()
    params = params_init
    out = EMResult(params)
    for m in range(iters):
        sm = run_rbps(y, params, f, N, l, seed, prior=prior, store_stats=True)
        out.loglik.append(sm.loglik)
        out.trace.append(params.to_dict())
        params = mstep(sm.stats, y, params, f, fix_A=fix_A, diag_Q=diag_Q, q_mask=q_mask,
                       update_acd=update_acd, estimate_shape=estimate_shape)
        if callback is not None:
            callback(m, params, sm)
        out.smoother = sm
    out.params = params
    return out


def spectral_omega(y, detrend: str = "constant") -> float:
    """Angular frequency (rad/sample) of the periodogram peak, refined by a
    parabola through the log-power of the peak bin and its neighbours."""
    from scipy.signal import periodogram

    y = np.asarray(y, dtype=float).ravel()
    freq, power = periodogram(y, detrend=detrend)
    k = int(np.argmax(power[1:])) + 1
    fk = freq[k]
    if 1 <= k < power.size - 1 and np.all(power[k - 1:k + 2] > 0):
        lp = np.log(power[k - 1:k + 2])
        den = lp[0] - 2 * lp[1] + lp[2]
        if den < 0:
            fk = fk + 0.5 * (lp[0] - lp[2]) / den * (freq[1] - freq[0])
    return float(2 * np.pi * fk)
