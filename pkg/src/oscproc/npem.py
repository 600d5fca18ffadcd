"""Nonparametric EM for the oscillation pattern.

The M-step for ``f`` is a weighted circular kernel regression built from the
smoothed statistics. Between iterations two corrections are applied: a warp
that makes the folded phase distribution uniform, and a transfer of any
periodic component of the smoothed amplitude/baseline into the pattern.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from . import _backend
from .core import ModelParams, OscillationPattern, TWO_PI, eval_pattern, fold
from .em import mstep
from .kalman import GaussState
from .particle import SmoothedStats, run_rbps

DEN_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel bandwidths (radians) on wrapped phase differences.

    ``h`` is used by the pattern estimator, ``h_phi`` by the folded-phase
    density and ``h_a`` / ``h_b`` by the periodic amplitude and baseline.
    Unset bandwidths follow the rule of thumb ``2 pi (N T_eff)^(-1/5)``,
    so ``h_phi``, ``h_a`` and ``h_b`` agree unless overridden.
    """

    h: float | None = None
    h_phi: float | None = None
    h_a: float | None = None
    h_b: float | None = None

    def __post_init__(self):
        for name in ("h", "h_phi", "h_a", "h_b"):
            v = getattr(self, name)
            if v is not None and not (0 < v < np.pi):
                raise ValueError(f"bandwidth {name} must lie in (0, pi)")

    @staticmethod
    def rule_of_thumb(N: int, T_eff: float) -> float:
        return float(min(TWO_PI * (N * T_eff) ** -0.2, 3.0))

    def resolved(self, N: int = 1, T_eff: float = 1.0) -> "KernelSpec":
        r = self.rule_of_thumb(N, T_eff)
        return KernelSpec(self.h or r, self.h_phi or r, self.h_a or r, self.h_b or r)


def circular_kernel(d, h):
    """Gaussian kernel of wrapped differences, normalised on the circle."""
    d = d - TWO_PI * np.floor((d + np.pi) / TWO_PI)
    return np.exp(-0.5 * (d / h) ** 2) / (h * np.sqrt(TWO_PI) * erf(np.pi / (h * np.sqrt(2))))


def _grid(M):
    return TWO_PI * np.arange(M) / M


def _sums(phi, w, vals, h, M):
    """Kernel-weighted sums on the grid, columns ``[sum wK, sum wK vals...]``."""
    phi = np.ascontiguousarray(fold(np.asarray(phi, dtype=float).ravel()))
    w = np.ascontiguousarray(np.asarray(w, dtype=float).ravel())
    vals = np.ascontiguousarray(np.asarray(vals, dtype=float).reshape(phi.size, -1))
    keep = w > 0
    if not keep.all():
        phi, w, vals = phi[keep], w[keep], np.ascontiguousarray(vals[keep])
    out = np.empty((M, vals.shape[1] + 1))
    _backend.impl().circular_kernel_sums(_grid(M), phi, w, vals, float(h), out,
                                         _backend.num_threads())
    return out


def _fill_uncovered(values, covered):
    """Periodic linear interpolation over nodes that are not covered."""
    if covered.all():
        return values, 0
    if not covered.any():
        return np.zeros_like(values), values.size
    M = values.size
    g = np.arange(M)
    xs = g[covered]
    xp = np.concatenate((xs - M, xs, xs + M))
    fp = np.tile(values[covered], 3)
    out = values.copy()
    out[~covered] = np.interp(g[~covered], xp, fp)
    return out, int((~covered).sum())


def _t_eff(stats: SmoothedStats) -> float:
    ess = 1.0 / np.sum(stats.w ** 2, axis=1)
    return float(ess.sum() / stats.w.shape[1])


def default_spec(stats: SmoothedStats, spec: KernelSpec | None) -> KernelSpec:
    spec = spec or KernelSpec()
    return spec.resolved(stats.w.shape[1], _t_eff(stats))


def kernel_pattern_estimate(stats: SmoothedStats, y, spec: KernelSpec | None = None,
                            M: int = 256, return_uncovered: bool = False):
    """Kernel M-step for the pattern evaluated on an ``M``-node grid.

    ``f(phi) = sum w K(phi - phi_t^i) (y_t a_t^i - S12) / sum w K(...) S11``
    with ``S = Sigma + m m^T`` the smoothed second moment of ``(a, b)``.
    Nodes with denominator below 1e-12 are filled by periodic interpolation.
    """
    spec = default_spec(stats, spec)
    y = np.asarray(y, dtype=float).ravel()
    S = stats.second_moment()
    num = y[:, None] * stats.mean[..., 0] - S[..., 0, 1]
    vals = np.stack([S[..., 0, 0], num], axis=-1)
    out = _sums(stats.phi, stats.w, vals, spec.h, M)
    den, top = out[:, 1], out[:, 2]
    covered = den > DEN_FLOOR
    f = np.where(covered, top / np.where(covered, den, 1.0), 0.0)
    f, n_unc = _fill_uncovered(f, covered)
    pat = OscillationPattern(f)
    return (pat, n_unc) if return_uncovered else pat


def folded_phase_density(stats: SmoothedStats, spec: KernelSpec | None = None,
                         M: int = 256) -> OscillationPattern:
    """Kernel density of the folded smoothed phases, tabulated on the grid.

    Uses the circle-normalised kernel and divides by the total weight, so the
    density integrates to one over ``[0, 2 pi)``.
    """
    spec = default_spec(stats, spec)
    return _density(stats.phi, stats.w, spec.h_phi, M)


def _density(phi, w, h, M):
    out = _sums(phi, w, np.zeros((np.size(phi), 0)), h, M)
    norm = h * np.sqrt(TWO_PI) * erf(np.pi / (h * np.sqrt(2)))
    dens = out[:, 0] / (norm * np.sum(w))
    # trapezoid on the periodic grid is the plain mean times 2 pi
    return OscillationPattern(dens / (dens.mean() * TWO_PI))


@dataclass(frozen=True)
class PhaseEDF:
    """Piecewise-linear distribution function on ``[0, 2 pi]`` (frequency polygon).

    ``knots`` are the grid nodes ``2 pi j / M`` for ``j = 0..M`` and
    ``values`` the cumulative probabilities there, from 0 to 1.
    """

    knots: np.ndarray
    values: np.ndarray

    @classmethod
    def identity(cls, M: int = 256) -> "PhaseEDF":
        return cls(TWO_PI * np.arange(M + 1) / M, np.arange(M + 1) / M)

    def __call__(self, x):
        return np.interp(fold(np.asarray(x, dtype=float)), self.knots, self.values)

    def inverse(self, q):
        """Quantile map ``[0, 1] -> [0, 2 pi]``; exact inverse of the polygon."""
        q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
        k = np.clip(np.searchsorted(self.values, q, side="right") - 1, 0, self.values.size - 2)
        v0, v1 = self.values[k], self.values[k + 1]
        frac = (q - v0) / (v1 - v0)
        return self.knots[k] + frac * (self.knots[k + 1] - self.knots[k])


def folded_phase_edf(density: OscillationPattern) -> PhaseEDF:
    """Cumulative integral of a grid density as a strictly increasing polygon."""
    d = np.asarray(density.values, dtype=float)
    M = d.size
    d = np.maximum(d, 1e-12 * max(d.mean(), 1e-300))
    seg = 0.5 * (d + np.roll(d, -1)) * (TWO_PI / M)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    vals = cum / cum[-1]
    vals[-1] = 1.0
    return PhaseEDF(TWO_PI * np.arange(M + 1) / M, vals)


def two_period_average(phi, w, v):
    """Weighted mean of ``v`` over all points whose unwrapped phase lies in
    ``(phi - 2 pi, phi + 2 pi]``, evaluated at every point.

    Returns the averages and a mask of points whose window had zero weight.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    order = np.argsort(phi, kind="stable")
    ps = phi[order]
    cw = np.concatenate(([0.0], np.cumsum(w[order])))
    cv = np.concatenate(([0.0], np.cumsum((w * v)[order])))
    lo = np.searchsorted(ps, phi - TWO_PI, side="right")
    hi = np.searchsorted(ps, phi + TWO_PI, side="right")
    sw = cw[hi] - cw[lo]
    sv = cv[hi] - cv[lo]
    empty = sw <= 0
    avg = np.where(empty, 0.0, sv / np.where(empty, 1.0, sw))
    return avg, empty


def _bar(stats: SmoothedStats, comp: int, name: str):
    v = stats.mean[..., comp]
    avg, empty = two_period_average(stats.phi, stats.w, v)
    if empty.any():
        warnings.warn(f"empty two-period window for {name}; using the global mean",
                      RuntimeWarning, stacklevel=3)
        avg[empty] = float(np.sum(stats.w * v) / np.sum(stats.w))
    return avg.reshape(v.shape)


def periodic_amplitude(stats: SmoothedStats, spec: KernelSpec | None = None,
                       M: int = 256) -> OscillationPattern:
    """Kernel regression of ``a_t^i / abar(phi_t^i)`` on the folded phase.

    ``abar`` is the weighted mean of the smoothed amplitudes over the two
    periods around each point, so slow amplitude variation cancels and only
    the part locked to the phase remains.
    """
    spec = default_spec(stats, spec)
    abar = _bar(stats, 0, "amplitude")
    tiny = np.abs(abar) < 1e-12
    if tiny.any():
        warnings.warn("vanishing local amplitude; using the global mean", RuntimeWarning,
                      stacklevel=2)
        abar = np.where(tiny, np.sum(stats.w * stats.mean[..., 0]) / np.sum(stats.w), abar)
    ratio = stats.mean[..., 0] / abar
    return _regress(stats.phi, stats.w, ratio, spec.h_a, M, fill=1.0)


def periodic_baseline(stats: SmoothedStats, spec: KernelSpec | None = None,
                      M: int = 256) -> OscillationPattern:
    """Additive analogue of :func:`periodic_amplitude` for the baseline."""
    spec = default_spec(stats, spec)
    bbar = _bar(stats, 1, "baseline")
    return _regress(stats.phi, stats.w, stats.mean[..., 1] - bbar, spec.h_b, M, fill=0.0)


def _regress(phi, w, v, h, M, fill):
    out = _sums(phi, w, np.asarray(v).reshape(-1, 1), h, M)
    den, top = out[:, 0], out[:, 1]
    covered = den > DEN_FLOOR
    vals = np.where(covered, top / np.where(covered, den, 1.0), fill)
    vals, _ = _fill_uncovered(vals, covered)
    return OscillationPattern(vals)


def combined_correction(f_new: OscillationPattern, edf: PhaseEDF, a_per, b_per,
                        M: int | None = None) -> OscillationPattern:
    """``f(u) = a_per(G(u)) f_new(G(u)) + b_per(G(u))`` with
    ``G(u) = edf^{-1}(u / 2 pi)``, tabulated on an ``M``-node grid."""
    M = f_new.M if M is None else M
    u = edf.inverse(np.arange(M) / M)
    return OscillationPattern(eval_pattern(a_per, u) * eval_pattern(f_new, u)
                              + eval_pattern(b_per, u))


def aligned_relative_l2(f_hat, f_true) -> float:
    """``min_theta ||f_hat(. - theta) - f|| / ||f||`` over grid shifts."""
    a = np.asarray(getattr(f_hat, "values", f_hat), dtype=float)
    b = np.asarray(getattr(f_true, "values", f_true), dtype=float)
    if a.size != b.size:
        raise ValueError("patterns must share a grid")
    # ||roll(a, s) - b||^2 = |a|^2 + |b|^2 - 2 xcorr(s); circular xcorr by FFT
    xc = np.fft.irfft(np.fft.rfft(a) * np.conj(np.fft.rfft(b)), n=a.size)
    s = int(np.argmax(xc))
    err = np.linalg.norm(np.roll(a, -s) - b)
    return float(err / np.linalg.norm(b))


def transfer_level(f: OscillationPattern, stats: SmoothedStats) -> OscillationPattern:
    """``mean(a) f + mean(b)`` with weighted time averages of the smoothed
    amplitude and baseline."""
    T = stats.T
    a_bar = float(np.sum(stats.w * stats.mean[..., 0]) / T)
    b_bar = float(np.sum(stats.w * stats.mean[..., 1]) / T)
    return OscillationPattern(a_bar * np.asarray(f.values) + b_bar)


def anchor_pattern(f: OscillationPattern) -> OscillationPattern:
    """Rotate the pattern so its maximum sits at phase zero (reporting only)."""
    return OscillationPattern(np.roll(f.values, -int(np.argmax(f.values))))


@dataclass
class NPEMResult:
    f_hat: OscillationPattern
    params: ModelParams
    loglik: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    patterns: list = field(default_factory=list)
    smoother: object = None


def npem_fit(y, params_init: ModelParams, f_init: OscillationPattern | None, N: int, l: int,
             iters: int, spec: KernelSpec | None = None, seed=0, M: int = 256,
             prior: GaussState | None = None, diag_Q: bool = True, q_mask=None,
             update_acd: bool = True, corrections: bool = True,
             normalize_level: bool = True,
             callback=None) -> NPEMResult:
    """Alternate smoothing, parametric M-steps and the kernel pattern update.

    Corrections are applied on every iteration except the last (never if
    ``corrections`` is False). The smoothed
    time-0 particles and weights of each run seed the next one; after a
    correction their phases are mapped through the same warp as the pattern.
    With ``normalize_level`` the weighted average smoothed level
    ``(mean a, mean b)`` is moved into the pattern after each kernel step so
    that the amplitude and baseline stay centred on ``(1, 0)``; with
    ``A = I`` nothing else pins the scale and offset of ``f``.
    ``patterns[0]`` is ``f_init`` (zeros when ``None``) and ``patterns[m]``
    the estimate after iteration ``m``.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    y = np.asarray(getattr(y, "y", y), dtype=float).ravel()
    params = params_init
    if params.pattern_known:
        params = params.replace(pattern_known=False, mu=np.array([1.0, 0.0]))
    f = f_init if f_init is not None else OscillationPattern(np.zeros(M))
    res = NPEMResult(f, params, patterns=[f])
    carry = None
    for m in range(iters):
        sm = run_rbps(y, params, f, N, l, seed, prior=prior, init=carry, store_stats=True)
        st = sm.stats
        res.loglik.append(sm.loglik)
        res.trace.append(params.to_dict())
        sp = default_spec(st, spec)
        f_tilde = kernel_pattern_estimate(st, y, sp, M)
        # sigma^2 and the other M-steps use the pattern in the coordinates of
        # the statistics, before any correction
        c = eval_pattern(f_tilde, st.phi)
        params = mstep(st, y, params, f_tilde, fix_A=True, diag_Q=diag_Q, q_mask=q_mask,
                       update_acd=update_acd, c=c)
        if normalize_level:
            f_tilde = transfer_level(f_tilde, st)
        # only the phase particles are carried; (a_0, b_0) restarts from the prior
        carry = ({k: sm.initial[k] for k in ("phi", "psi", "w")}
                 if sm.initial is not None else None)
        if corrections and m < iters - 1:
            edf = folded_phase_edf(folded_phase_density(st, sp, M))
            f_new = combined_correction(f_tilde, edf, periodic_amplitude(st, sp, M),
                                        periodic_baseline(st, sp, M), M)
            if carry is not None:
                carry["phi"] = TWO_PI * edf(carry["phi"])
        else:
            f_new = f_tilde
        f = f_new
        res.patterns.append(f)
        res.smoother = sm
        if callback is not None:
            callback(m, params, f, sm)
    res.f_hat = f
    res.params = params
    return res
