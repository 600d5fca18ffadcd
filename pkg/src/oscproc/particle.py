"""Rao-Blackwellised particle filter and fixed-lag smoother.

Particles carry the phase pair ``(phi, psi)``; the amplitude/baseline pair is
integrated out by a per-particle Kalman filter. Per-particle history lives in
ring buffers of ``l + 2`` time slots. Resampling does not copy windows: it
permutes the newest slot and records ancestor indices, and the backward pass
follows those ancestry links. This is equivalent to copying every window entry
but costs O(N) per resampling step.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .core import ModelParams, OscillationPattern, TWO_PI, eval_pattern, fold, wrap
from .kalman import (F_FLOOR, GaussState, innovation_batch, loglik_batch, predict_batch,
                     update_batch)

RESAMPLE_FRACTION = 0.2


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; all draws happen serially so results do not
    depend on the thread count."""
    return np.random.Generator(np.random.Philox(seed))


def ess(weights) -> float:
    """Effective sample size ``1 / sum(w**2)`` of normalised weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must be non-negative and sum to one")
    return float(1.0 / np.dot(w, w))


def systematic_indices(weights, u: float) -> np.ndarray:
    """Ancestor indices from one uniform ``u`` in [0, 1) stratified over N slots."""
    w = np.asarray(weights, dtype=float)
    N = w.size
    cw = np.cumsum(w)
    cw[-1] = 1.0
    pos = (u + np.arange(N)) / N
    return np.minimum(np.searchsorted(cw, pos, side="right"), N - 1)


def offspring_counts(weights, u: float) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return np.bincount(systematic_indices(w, u), minlength=w.size)


class ParticleCloud:
    """N weighted particles with ring-buffered fixed-lag history.

    Buffers have shape ``(L, N, ...)`` with ``L = lag + 2``; time ``t`` lives
    in slot ``t % L``. ``anc[slot(t)][i]`` is the index, among the particles at
    ``t - 1``, of the parent of particle ``i`` at ``t``.
    """

    def __init__(self, N: int, lag: int):
        if N < 1:
            raise ValueError("N must be positive")
        if lag < 0:
            raise ValueError("lag must be non-negative")
        self.N, self.lag = int(N), int(lag)
        L = self.L = lag + 2
        self.m = np.zeros((L, N, 2))
        self.P = np.zeros((L, N, 4))
        self.mp = np.zeros((L, N, 2))
        self.Pp = np.zeros((L, N, 4))
        self.K = np.zeros((L, N, 2))
        self.cv = np.zeros((L, N))
        self.phi = np.zeros((L, N))
        self.psi = np.zeros((L, N))
        self.anc = np.tile(np.arange(N, dtype=np.int64), (L, 1))
        self.w = np.full(N, 1.0 / N)
        self.t = 0
        self.rng = None
        self.n_weight_resets = 0
        self.last_ess = float(N)
        self.last_resampled = False
        self.last_logev = 0.0

    def slot(self, t: int) -> int:
        return t % self.L

    def ess(self) -> float:
        return ess(self.w)

    def filter_mean(self) -> np.ndarray:
        """Weighted filtered mean of ``(a_t, b_t)`` at the current time."""
        return self.w @ self.m[self.slot(self.t)]

    def filter_phase(self) -> np.ndarray:
        return self.phi[self.slot(self.t)].copy()

    def gauss(self, i: int, t: int | None = None) -> GaussState:
        s = self.slot(self.t if t is None else t)
        return GaussState(self.m[s, i], self.P[s, i].reshape(2, 2))

    def _resample_current(self, u: float) -> np.ndarray:
        idx = systematic_indices(self.w, u)
        s = self.slot(self.t)
        for buf in (self.m, self.P, self.mp, self.Pp, self.K, self.cv, self.phi, self.psi):
            buf[s] = buf[s][idx]
        self.anc[s] = self.anc[s][idx]
        self.w = np.full(self.N, 1.0 / self.N)
        return idx


def init_cloud(N: int, params: ModelParams, f: OscillationPattern | None = None,
               prior_gauss: GaussState | None = None, seed=0, lag: int = 0,
               init: dict | None = None) -> ParticleCloud:
    """Time-0 cloud: folded phases uniform on ``[0, 2*pi)``, ``psi_0 = omega``.

    ``init`` (from a previous smoother run) supplies ``phi``, ``psi`` and
    ``w`` arrays instead of the prior draw; ``mean`` and ``cov`` entries, if
    present, replace the prior of ``(a_0, b_0)``. ``f`` is unused and accepted
    for symmetry with :func:`filter_step`.
    """
    if prior_gauss is None:
        prior_gauss = GaussState(params.mu, params.Q)
    cloud = ParticleCloud(N, lag)
    cloud.rng = make_rng(seed)
    s = cloud.slot(0)
    if init is None:
        cloud.phi[s] = cloud.rng.uniform(0.0, TWO_PI, size=N)
        cloud.psi[s] = params.omega
        cloud.m[s] = prior_gauss.mean
        cloud.P[s] = prior_gauss.cov.reshape(4)
    else:
        if np.shape(init["phi"]) != (N,):
            raise ValueError("carried initial particles do not match N")
        cloud.phi[s] = init["phi"]
        cloud.psi[s] = init["psi"]
        if "mean" in init:
            cloud.m[s] = init["mean"]
            cloud.P[s] = np.reshape(init["cov"], (N, 4))
        else:
            cloud.m[s] = prior_gauss.mean
            cloud.P[s] = prior_gauss.cov.reshape(4)
        w = np.asarray(init["w"], dtype=float)
        cloud.w = w / w.sum()
    cloud.mp[s] = cloud.m[s]
    cloud.Pp[s] = cloud.P[s]
    return cloud


def filter_step(cloud: ParticleCloud, y_t: float, params: ModelParams,
                f: OscillationPattern | None) -> ParticleCloud:
    """Advance the cloud by one observation (in place; the cloud is returned).

    Predict, propose ``(phi, psi)`` from the ACD transition, weight by the
    conditional predictive density of ``y_t``, resample when the ESS drops
    below ``0.2 N`` and apply the Kalman update. ``f = None`` means ``f = 0``.
    """
    N = cloud.N
    sp = cloud.slot(cloud.t)
    cloud.t += 1
    s = cloud.slot(cloud.t)
    mp, Pp = predict_batch(cloud.m[sp], cloud.P[sp].reshape(N, 2, 2), params.mu, params.A,
                           params.Q)
    nu = params.acd_shape
    eta = cloud.rng.gamma(nu, 1.0 / nu, size=N)
    psi = (params.alpha + params.beta * cloud.psi[sp]) * eta
    phi = cloud.phi[sp] + psi
    c = np.zeros(N) if f is None else eval_pattern(f, phi)
    pred, F = innovation_batch(mp, Pp, y_t, c, params.sigma_eps2)
    F = np.maximum(F, F_FLOOR)
    ll = loglik_batch(y_t, pred, F)

    with np.errstate(divide="ignore"):
        lw = np.log(cloud.w) + ll
    top = lw.max()
    if not np.isfinite(top):
        cloud.n_weight_resets += 1
        cloud.w = np.full(N, 1.0 / N)
        cloud.last_logev = -np.inf
    else:
        w = np.exp(lw - top)
        tot = w.sum()
        cloud.w = w / tot
        cloud.last_logev = float(top + np.log(tot))

    mean, cov, K = update_batch(mp, Pp, y_t, c, params.sigma_eps2, pred, F)
    cloud.m[s] = mean
    cloud.P[s] = cov.reshape(N, 4)
    cloud.mp[s] = mp
    cloud.Pp[s] = Pp.reshape(N, 4)
    cloud.K[s] = K
    cloud.cv[s] = c
    cloud.phi[s] = phi
    cloud.psi[s] = psi
    cloud.anc[s] = np.arange(N)

    cloud.last_ess = float(1.0 / np.dot(cloud.w, cloud.w))
    cloud.last_resampled = cloud.last_ess < RESAMPLE_FRACTION * N
    if cloud.last_resampled:
        cloud._resample_current(cloud.rng.uniform())
    return cloud


def systematic_resample(cloud: ParticleCloud, seed) -> ParticleCloud:
    """Resample the current time slot with a fresh uniform from ``seed``."""
    cloud._resample_current(make_rng(seed).uniform())
    return cloud


@dataclass
class SmoothWindow:
    """Backward-pass output for ``n_out`` consecutive times, oldest first."""

    t0: int
    mean: np.ndarray      # (n_out, N, 2)
    cov: np.ndarray       # (n_out, N, 2, 2)
    cross: np.ndarray     # (n_out, N, 2, 2); Cov(x_k, x_{k-1}); oldest is nan
    idx: np.ndarray       # (n_out, N) lineage index at each time
    n_singular: int = 0


def fixed_lag_smooth(cloud: ParticleCloud, n: int, n_out: int, A) -> SmoothWindow:
    """Kalman-smooth every particle lineage over the newest ``n`` times.

    Results are returned for the ``n_out`` oldest of them. The smoothing
    weights are the cloud's current weights.
    """
    N = cloud.N
    if not 1 <= n <= min(cloud.t + 1, cloud.L):
        raise ValueError("window length exceeds the available history")
    if not 1 <= n_out <= n:
        raise ValueError("n_out must lie in [1, n]")
    slots = np.array([cloud.slot(cloud.t - j) for j in range(n)], dtype=np.int64)
    out_mean = np.empty((n_out, N, 2))
    out_cov = np.empty((n_out, N, 4))
    out_cross = np.empty((n_out, N, 4))
    out_idx = np.empty((n_out, N), dtype=np.int64)
    nsing = _backend.impl().backward_window(
        cloud.m, cloud.P, cloud.mp, cloud.Pp, cloud.K, cloud.cv, cloud.anc,
        np.ascontiguousarray(A, dtype=float), slots, int(n_out),
        out_mean, out_cov, out_cross, out_idx, _backend.num_threads())
    return SmoothWindow(cloud.t - n + 1, out_mean, out_cov.reshape(n_out, N, 2, 2),
                        out_cross.reshape(n_out, N, 2, 2), out_idx, int(nsing))


@dataclass
class SmoothedStats:
    """Per-time, per-particle smoothed quantities feeding the M-steps.

    Row ``k`` refers to time ``t = k + 1``. ``*_prev`` hold the same lineage's
    smoothed state at ``t - 1`` from the same backward pass.
    """

    w: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    psi_prev: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    cross: np.ndarray
    mean_prev: np.ndarray
    cov_prev: np.ndarray

    @classmethod
    def empty(cls, T: int, N: int) -> "SmoothedStats":
        z = lambda *s: np.zeros((T, N) + s)
        return cls(z(), z(), z(), z(), z(2), z(2, 2), z(2, 2), z(2), z(2, 2))

    @property
    def T(self) -> int:
        return self.w.shape[0]

    def second_moment(self) -> np.ndarray:
        """``S = Sigma + m m^T`` per time and particle."""
        return self.cov + self.mean[..., :, None] * self.mean[..., None, :]


@dataclass
class SmootherOutput:
    phi_hat: np.ndarray
    phi_folded: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    loglik: float
    n_weight_resets: int = 0
    n_singular: int = 0
    stats: SmoothedStats | None = None
    initial: dict | None = None
    filter_mean: np.ndarray | None = None

    @property
    def resample_times(self) -> np.ndarray:
        return np.flatnonzero(self.resampled) + 1


class _Recorder:
    def __init__(self, T, N, omega, store_stats):
        self.phi_hat = np.zeros(T)
        self.a_hat = np.zeros(T)
        self.b_hat = np.zeros(T)
        self.stats = SmoothedStats.empty(T, N) if store_stats else None
        self.omega = omega
        self.initial = None
        self.n_singular = 0

    def take(self, cloud: ParticleCloud, win: SmoothWindow, times):
        self.n_singular += win.n_singular
        w = cloud.w
        for t in times:
            o = t - win.t0
            idx = win.idx[o]
            if t == 0:
                self._snapshot(cloud, win, w)
                continue
            idxp = win.idx[o - 1]
            phi = cloud.phi[cloud.slot(t), idx]
            if t == 1:
                ref = phi[np.argmax(w)]
            else:
                ref = self.phi_hat[t - 2] + self.omega
            phi = ref + wrap(phi - ref)
            k = t - 1
            self.phi_hat[k] = w @ phi
            ab = w @ win.mean[o]
            self.a_hat[k], self.b_hat[k] = ab
            if self.stats is not None:
                st = self.stats
                st.w[k] = w
                st.phi[k] = phi
                st.psi[k] = cloud.psi[cloud.slot(t), idx]
                st.psi_prev[k] = cloud.psi[cloud.slot(t - 1), idxp]
                st.mean[k] = win.mean[o]
                st.cov[k] = win.cov[o]
                st.cross[k] = win.cross[o]
                st.mean_prev[k] = win.mean[o - 1]
                st.cov_prev[k] = win.cov[o - 1]

    def _snapshot(self, cloud, win, w):
        idx = win.idx[0]
        s = cloud.slot(0)
        self.initial = {"phi": cloud.phi[s, idx].copy(), "psi": cloud.psi[s, idx].copy(),
                        "mean": win.mean[0].copy(), "cov": win.cov[0].copy(),
                        "w": w.copy()}


def run_rbps(y, params: ModelParams, f: OscillationPattern | None, N: int, l: int, seed,
             prior: GaussState | None = None, init: dict | None = None,
             store_stats: bool = False, record_filter: bool = False) -> SmootherOutput:
    """Streaming RBPF with fixed-lag smoothing of lag ``l``.

    The state at time ``t`` is estimated from ``y_{1:min(t+l, T)}`` with the
    particle weights of time ``min(t+l, T)``. Memory is O(lN) unless
    ``store_stats`` asks for the full per-particle statistics used by EM.

    Parameters
    ----------
    y : array_like or ObservationSeries
    f : OscillationPattern or None
        ``None`` stands for the zero pattern.
    init : dict, optional
        Carried initial particles, see :func:`init_cloud`.
    """
    y = np.asarray(getattr(y, "y", y), dtype=float).ravel()
    T = y.size
    if N < 1 or l < 0:
        raise ValueError("need N >= 1 and l >= 0")
    cloud = init_cloud(N, params, f, prior, seed, lag=l, init=init)
    rec = _Recorder(T, N, params.omega, store_stats)
    ess_tr = np.zeros(T)
    res_tr = np.zeros(T, dtype=bool)
    fmean = np.zeros((T, 2)) if record_filter else None
    loglik = 0.0
    emitted = 0
    for t in range(1, T + 1):
        filter_step(cloud, y[t - 1], params, f)
        ess_tr[t - 1] = cloud.last_ess
        res_tr[t - 1] = cloud.last_resampled
        loglik += cloud.last_logev
        if record_filter:
            fmean[t - 1] = cloud.filter_mean()
        if t >= l + 1:
            e = t - l
            win = fixed_lag_smooth(cloud, l + 2, 2, params.A)
            rec.take(cloud, win, range(e - 1, e + 1) if e == 1 else [e])
            emitted = e
    if emitted < T:
        start = emitted + 1
        n = T - start + 2
        win = fixed_lag_smooth(cloud, n, n, params.A)
        times = range(start - 1, T + 1) if start == 1 else range(start, T + 1)
        rec.take(cloud, win, times)
    if cloud.n_weight_resets:
        warnings.warn(f"{cloud.n_weight_resets} weight resets (all likelihoods vanished)",
                      RuntimeWarning, stacklevel=2)
    return SmootherOutput(rec.phi_hat, fold(rec.phi_hat), rec.a_hat, rec.b_hat, ess_tr,
                          res_tr, float(loglik), cloud.n_weight_resets, rec.n_singular,
                          rec.stats, rec.initial, fmean)
