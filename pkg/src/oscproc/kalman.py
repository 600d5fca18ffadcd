"""Conditional linear-Gaussian recursions for the amplitude/baseline pair.

Given a phase path, ``(a_t, b_t)`` follows a two-dimensional Gaussian VAR(1)
observed through the row ``C_t = (f(phi_t), 1)``. Everything here is specific
to that 2-state block. The batched helpers (leading particle axis) are used by
the particle filter; the :class:`GaussState` functions are the scalar API.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ModelParams

F_FLOOR = 1e-12
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = symmetrize(np.asarray(self.cov, dtype=float).reshape(2, 2))


def symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def sym_pinv2(P, rtol=1e-12):
    """Pseudo-inverse of symmetric PSD 2x2 matrices (batched over leading axes).

    Returns ``(Pinv, singular_mask)``. Rank-deficient inputs are inverted on
    their range: for a rank-one ``P`` with trace ``s``, ``pinv(P) = P / s**2``.
    """
    P = np.asarray(P, dtype=float)
    a, b, d = P[..., 0, 0], P[..., 0, 1], P[..., 1, 1]
    tr = a + d
    det = a * d - b * b
    singular = det <= rtol * tr * tr
    safe_det = np.where(singular, 1.0, det)
    inv = np.empty_like(P)
    inv[..., 0, 0] = d / safe_det
    inv[..., 1, 1] = a / safe_det
    inv[..., 0, 1] = inv[..., 1, 0] = -b / safe_det
    if np.any(singular):
        tr2 = np.where(tr > 0, tr * tr, 1.0)
        r1 = P / tr2[..., None, None]
        r1 = np.where((tr > 0)[..., None, None], r1, 0.0)
        inv = np.where(singular[..., None, None], r1, inv)
    return inv, singular


# ---------------------------------------------------------------- batched core

def predict_batch(mean, cov, mu, A, Q):
    mp = mu + (mean - mu) @ A.T
    Pp = A @ cov @ A.T + Q
    return mp, symmetrize(Pp)


def innovation_batch(mp, Pp, y, c, sigma_eps2):
    """Innovation mean and variance for rows ``C = (c, 1)``."""
    pred = c * mp[..., 0] + mp[..., 1]
    F = (c * c * Pp[..., 0, 0] + 2.0 * c * Pp[..., 0, 1] + Pp[..., 1, 1]) + sigma_eps2
    return pred, F


def loglik_batch(y, pred, F):
    return -0.5 * (LOG_2PI + np.log(F) + (y - pred) ** 2 / F)


def update_batch(mp, Pp, y, c, sigma_eps2, pred=None, F=None):
    """Joseph-form measurement update; returns ``(mean, cov, gain)``."""
    if pred is None:
        pred, F = innovation_batch(mp, Pp, y, c, sigma_eps2)
    PC = np.stack([c * Pp[..., 0, 0] + Pp[..., 0, 1],
                   c * Pp[..., 1, 0] + Pp[..., 1, 1]], axis=-1)
    K = PC / F[..., None]
    mean = mp + K * (y - pred)[..., None]
    C = np.stack([c * np.ones_like(F), np.ones_like(F)], axis=-1)
    IKC = np.eye(2) - K[..., :, None] * C[..., None, :]
    cov = IKC @ Pp @ np.swapaxes(IKC, -1, -2) + sigma_eps2 * K[..., :, None] * K[..., None, :]
    return mean, symmetrize(cov), K


# ---------------------------------------------------------------- scalar API

def predict(prior: GaussState, params: ModelParams) -> GaussState:
    """One-step prediction ``mu + A (m - mu)``, ``A P A^T + Q``."""
    mp, Pp = predict_batch(prior.mean, prior.cov, params.mu, params.A, params.Q)
    return GaussState(mp, Pp)


def observation_likelihood(pred: GaussState, y: float, f_phi: float, sigma_eps2: float):
    """Log-density of ``y`` under the predictive law and the innovation variance ``F``."""
    if not sigma_eps2 > 0:
        raise ValueError("sigma_eps2 must be positive")
    mean, F = innovation_batch(pred.mean, pred.cov, y, f_phi, sigma_eps2)
    F = float(F)
    if not F > 0:
        raise ValueError(f"non-positive innovation variance {F}")
    if F < F_FLOOR:
        warnings.warn("innovation variance floored", RuntimeWarning, stacklevel=2)
        F = F_FLOOR
    return float(loglik_batch(y, mean, F)), F


def update(pred: GaussState, y: float, f_phi: float, sigma_eps2: float) -> GaussState:
    mean, cov, _ = update_batch(pred.mean, pred.cov, y, f_phi, sigma_eps2)
    return GaussState(mean, cov)


def kalman_gain(pred: GaussState, f_phi: float, sigma_eps2: float) -> np.ndarray:
    _, F = innovation_batch(pred.mean, pred.cov, 0.0, f_phi, sigma_eps2)
    return pred.cov @ np.array([f_phi, 1.0]) / F


def smooth_pass(filtered, predictions, params: ModelParams, gain_last, C_last):
    """Backward smoothing over a window of filtered states.

    Parameters
    ----------
    filtered : sequence of GaussState
        Filtered states for times ``k = 0..n-1`` of the window.
    predictions : sequence of GaussState
        ``predictions[k]`` is the one-step prediction of time ``k`` from
        ``filtered[k-1]``; ``predictions[0]`` is not used.
    gain_last, C_last : array_like
        Kalman gain and observation row of the last time in the window.

    Returns
    -------
    list of (GaussState, ndarray or None)
        Smoothed state and lag-one cross-covariance ``Cov(x_k, x_{k-1})`` for
        each ``k``; the cross term is ``None`` for ``k = 0``.
    """
    n = len(filtered)
    A = params.A
    out_s = [None] * n
    cross = [None] * n
    out_s[-1] = GaussState(filtered[-1].mean, filtered[-1].cov)
    if n == 1:
        return [(out_s[0], None)]
    K = np.asarray(gain_last, dtype=float).reshape(2)
    C = np.asarray(C_last, dtype=float).reshape(2)
    cross[-1] = (np.eye(2) - np.outer(K, C)) @ A @ filtered[-2].cov

    V = [None] * n
    for k in range(n - 2, -1, -1):
        Pinv, singular = sym_pinv2(predictions[k + 1].cov)
        if singular:
            warnings.warn("singular predicted covariance; using pseudo-inverse",
                          RuntimeWarning, stacklevel=2)
        V[k] = filtered[k].cov @ A.T @ Pinv
        mean = filtered[k].mean + V[k] @ (out_s[k + 1].mean - predictions[k + 1].mean)
        cov = filtered[k].cov + V[k] @ (out_s[k + 1].cov - predictions[k + 1].cov) @ V[k].T
        out_s[k] = GaussState(mean, cov)
        if k + 1 <= n - 2:
            # cross term of time k+1 needs V_{k+1} and V_k
            j = k + 1
            cross[j] = (filtered[j].cov @ V[k].T
                        + V[j] @ (cross[j + 1] - A @ filtered[j].cov) @ V[k].T)
    return list(zip(out_s, cross))


def brute_force_oracle(params: ModelParams, prior: GaussState, C, y):
    """Exact posterior moments by conditioning the joint Gaussian of states and data.

    States are ``x_0..x_T`` with ``x_0 ~ prior``; observations ``y_1..y_T``
    with rows ``C[t-1]``. Returns a dict with

    ``smooth_mean`` (T+1, 2), ``smooth_cov`` (T+1, 2, 2),
    ``smooth_cross`` (T+1, 2, 2) with ``Cov(x_k, x_{k-1} | y_{1:T})`` (entry 0 is nan),
    ``filter_mean`` / ``filter_cov`` conditioning ``x_t`` on ``y_{1:t}`` and
    ``pred_mean`` / ``pred_cov`` conditioning ``x_t`` on ``y_{1:t-1}``.
    """
    C = np.asarray(C, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).ravel()
    T = y.size
    if T > 50:
        raise ValueError("oracle limited to T <= 50")
    A, Q, mu = params.A, params.Q, params.mu
    n = 2 * (T + 1)
    mean_x = np.empty((T + 1, 2))
    var_x = np.empty((T + 1, 2, 2))
    mean_x[0], var_x[0] = prior.mean, prior.cov
    for k in range(1, T + 1):
        mean_x[k] = mu + A @ (mean_x[k - 1] - mu)
        var_x[k] = A @ var_x[k - 1] @ A.T + Q
    Sxx = np.empty((n, n))
    for j in range(T + 1):
        for k in range(j + 1):
            blk = np.linalg.matrix_power(A, j - k) @ var_x[k]
            Sxx[2 * j:2 * j + 2, 2 * k:2 * k + 2] = blk
            Sxx[2 * k:2 * k + 2, 2 * j:2 * j + 2] = blk.T
    H = np.zeros((T, n))
    for t in range(1, T + 1):
        H[t - 1, 2 * t:2 * t + 2] = C[t - 1]
    mx = mean_x.ravel()
    my = H @ mx
    Syy = H @ Sxx @ H.T + params.sigma_eps2 * np.eye(T)
    Sxy = Sxx @ H.T

    def condition(m):
        if m == 0:
            return mx, Sxx
        S = Syy[:m, :m]
        G = np.linalg.solve(S, Sxy[:, :m].T).T
        return mx + G @ (y[:m] - my[:m]), Sxx - G @ Sxy[:, :m].T

    post_mean, post_cov = condition(T)
    blk = lambda S, j, k: S[2 * j:2 * j + 2, 2 * k:2 * k + 2]
    out = {
        "smooth_mean": post_mean.reshape(T + 1, 2),
        "smooth_cov": np.array([blk(post_cov, k, k) for k in range(T + 1)]),
        "smooth_cross": np.array([np.full((2, 2), np.nan)]
                                 + [blk(post_cov, k, k - 1) for k in range(1, T + 1)]),
    }
    fm, fc, pm, pc = [], [], [], []
    for t in range(T + 1):
        m, S = condition(t)
        fm.append(m[2 * t:2 * t + 2])
        fc.append(blk(S, t, t))
        if t > 0:
            m0, S0 = condition(t - 1)
            pm.append(m0[2 * t:2 * t + 2])
            pc.append(blk(S0, t, t))
        else:
            pm.append(prior.mean)
            pc.append(prior.cov)
    out["filter_mean"] = np.array(fm)
    out["filter_cov"] = np.array(fc)
    out["pred_mean"] = np.array(pm)
    out["pred_cov"] = np.array(pc)
    return out


def kalman_filter(params: ModelParams, prior: GaussState, c, y):
    """Plain Kalman filter over a fixed phase path (``c[t-1] = f(phi_t)``).

    Returns filtered and one-step predicted states for ``t = 0..T`` (index 0
    holds the prior), the gains and the total log-likelihood.
    """
    c = np.asarray(c, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    T = y.size
    fm = np.empty((T + 1, 2))
    fc = np.empty((T + 1, 2, 2))
    pm = np.empty((T + 1, 2))
    pc = np.empty((T + 1, 2, 2))
    K = np.zeros((T + 1, 2))
    fm[0], fc[0] = prior.mean, prior.cov
    pm[0], pc[0] = prior.mean, prior.cov
    ll = 0.0
    for t in range(1, T + 1):
        pm[t], pc[t] = predict_batch(fm[t - 1], fc[t - 1], params.mu, params.A, params.Q)
        pred, F = innovation_batch(pm[t], pc[t], y[t - 1], c[t - 1], params.sigma_eps2)
        ll += float(loglik_batch(y[t - 1], pred, F))
        fm[t], fc[t], K[t] = update_batch(pm[t], pc[t], y[t - 1], c[t - 1], params.sigma_eps2,
                                          pred, F)
    return {"filter_mean": fm, "filter_cov": fc, "pred_mean": pm, "pred_cov": pc,
            "gain": K, "loglik": ll}
