"""Numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and output conventions match the compiled module exactly; the
``num_threads`` argument is accepted and ignored.
"""
from __future__ import annotations

import numpy as np

from .kalman import sym_pinv2


def _m(x):
    return x.reshape(x.shape[:-1] + (2, 2))


def backward_window(m, P, mp, Pp, K, cv, anc, A, slots, n_out,
                    out_mean, out_cov, out_cross, out_idx, num_threads=1):
    N = m.shape[1]
    n = slots.shape[0]
    jmin = n - n_out
    I2 = np.eye(2)
    idx = np.arange(N)
    s = slots[0]
    sm = m[s, idx].copy()
    sP = _m(P[s, idx]).copy()
    if jmin <= 0:
        out_mean[n - 1] = sm
        out_cov[n - 1] = sP.reshape(N, 4)
        out_cross[n - 1] = np.nan
        out_idx[n - 1] = idx
    if n < 2:
        return 0
    idx_prev = anc[s, idx]
    sn = slots[1]
    k = K[s, idx]
    c = cv[s, idx]
    C = np.stack([c, np.ones_like(c)], axis=-1)
    ikc = I2 - k[:, :, None] * C[:, None, :]
    cross = ikc @ A @ _m(P[sn, idx_prev])
    if jmin <= 0:
        out_cross[n - 1] = cross.reshape(N, 4)

    nsing = 0
    Vprev = None
    for j in range(1, n):
        sn = slots[j - 1]
        s = slots[j]
        idx_prev = idx
        idx = anc[sn, idx_prev]
        Pk = _m(P[s, idx])
        Ppn = _m(Pp[sn, idx_prev])
        Ppn = 0.5 * (Ppn + np.swapaxes(Ppn, -1, -2))
        Pinv, sing = sym_pinv2(Ppn)
        nsing += int(sing.sum())
        V = Pk @ A.T @ Pinv
        d = sm - mp[sn, idx_prev]
        sm = m[s, idx] + np.einsum("nij,nj->ni", V, d)
        sP = Pk + V @ (sP - _m(Pp[sn, idx_prev])) @ np.swapaxes(V, -1, -2)
        sP = 0.5 * (sP + np.swapaxes(sP, -1, -2))
        if j >= 2:
            Pj = _m(P[sn, idx_prev])
            Vt = np.swapaxes(V, -1, -2)
            cross = Pj @ Vt + Vprev @ (cross - A @ Pj) @ Vt
            if j - 1 >= jmin:
                out_cross[n - j] = cross.reshape(N, 4)
        Vprev = V
        if j >= jmin:
            o = n - 1 - j
            out_mean[o] = sm
            out_cov[o] = sP.reshape(N, 4)
            out_idx[o] = idx
            if j == n - 1:
                out_cross[o] = np.nan
    return nsing


def circular_kernel_sums(grid, x, w, vals, h, out, num_threads=1, chunk=1 << 16):
    nc = vals.shape[1]
    out[:] = 0.0
    inv2h2 = 0.5 / (h * h)
    rows = max(1, chunk // max(1, grid.size))
    for lo in range(0, x.size, rows):
        hi = min(x.size, lo + rows)
        d = grid[:, None] - x[None, lo:hi]
        d = d - 2.0 * np.pi * np.floor((d + np.pi) / (2.0 * np.pi))
        kw = w[None, lo:hi] * np.exp(-d * d * inv2h2)
        out[:, 0] += kw.sum(axis=1)
        if nc:
            out[:, 1:] += kw @ vals[lo:hi]
