# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: the per-particle fixed-lag backward pass and circular
kernel sums. ``_fallback.py`` holds numpy versions with the same signatures."""

from cython.parallel import prange
from libc.math cimport exp, floor, NAN

cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586


cdef inline int _pinv2(double a, double b, double d, double* out) noexcept nogil:
    cdef double tr = a + d
    cdef double det = a * d - b * b
    if det <= 1e-12 * tr * tr:
        if tr > 0:
            tr = tr * tr
            out[0] = a / tr
            out[1] = b / tr
            out[2] = b / tr
            out[3] = d / tr
        else:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = 0.0
            out[3] = 0.0
        return 1
    out[0] = d / det
    out[1] = -b / det
    out[2] = -b / det
    out[3] = a / det
    return 0


cdef inline void _mm(const double* x, const double* y, double* z) noexcept nogil:
    # z = x @ y for row-major 2x2
    z[0] = x[0] * y[0] + x[1] * y[2]
    z[1] = x[0] * y[1] + x[1] * y[3]
    z[2] = x[2] * y[0] + x[3] * y[2]
    z[3] = x[2] * y[1] + x[3] * y[3]


cdef inline void _mmt(const double* x, const double* y, double* z) noexcept nogil:
    # z = x @ y.T
    z[0] = x[0] * y[0] + x[1] * y[1]
    z[1] = x[0] * y[2] + x[1] * y[3]
    z[2] = x[2] * y[0] + x[3] * y[1]
    z[3] = x[2] * y[2] + x[3] * y[3]


def backward_window(double[:, :, ::1] m, double[:, :, ::1] P,
                    double[:, :, ::1] mp, double[:, :, ::1] Pp,
                    double[:, :, ::1] K, double[:, ::1] cv,
                    long[:, ::1] anc, double[:, ::1] A, long[::1] slots,
                    int n_out,
                    double[:, :, ::1] out_mean, double[:, :, ::1] out_cov,
                    double[:, :, ::1] out_cross, long[:, ::1] out_idx,
                    int num_threads=1):
    """Fixed-lag backward smoothing for every particle lineage.

    ``slots[j]`` is the ring-buffer slot of the time ``j`` steps before the
    newest. Outputs cover the ``n_out`` oldest positions, oldest first. The
    cross-covariance of the oldest window position is left as NaN. Returns
    the number of pseudo-inverse fallbacks.
    """
    cdef Py_ssize_t N = m.shape[1]
    cdef Py_ssize_t n = slots.shape[0]
    cdef Py_ssize_t i
    cdef long total = 0
    cdef double[4] a_
    a_[0] = A[0, 0]; a_[1] = A[0, 1]; a_[2] = A[1, 0]; a_[3] = A[1, 1]
    for i in prange(N, nogil=True, num_threads=num_threads, schedule="static"):
        total += _backward_one(m, P, mp, Pp, K, cv, anc, a_, slots, n, n_out, i,
                               out_mean, out_cov, out_cross, out_idx)
    return total


cdef long _backward_one(double[:, :, ::1] m, double[:, :, ::1] P,
                        double[:, :, ::1] mp, double[:, :, ::1] Pp,
                        double[:, :, ::1] K, double[:, ::1] cv,
                        long[:, ::1] anc, double* A, long[::1] slots,
                        Py_ssize_t n, int n_out, Py_ssize_t i,
                        double[:, :, ::1] out_mean, double[:, :, ::1] out_cov,
                        double[:, :, ::1] out_cross, long[:, ::1] out_idx) noexcept nogil:
    cdef Py_ssize_t j, o, q, jmin = n - n_out
    cdef long idx, idx_prev, s, sn
    cdef long nsing = 0
    cdef double sm0, sm1, d0, d1, c, k0, k1
    cdef double[4] sP, Pk, Ppn, Pinv, V, Vprev, cross, T1, T2, T3, ikc, tmp
    cdef double[4] nan4

    nan4[0] = NAN; nan4[1] = NAN; nan4[2] = NAN; nan4[3] = NAN
    s = slots[0]
    idx = i
    sm0 = m[s, idx, 0]
    sm1 = m[s, idx, 1]
    for q in range(4):
        sP[q] = P[s, idx, q]
    if jmin <= 0:
        o = n - 1
        out_mean[o, i, 0] = sm0
        out_mean[o, i, 1] = sm1
        for q in range(4):
            out_cov[o, i, q] = sP[q]
            out_cross[o, i, q] = NAN
        out_idx[o, i] = idx
    if n < 2:
        return 0

    # Cov(x_t, x_{t-1} | y_{1:t}) = (I - K C) A P_{t-1}
    idx_prev = anc[s, idx]
    sn = slots[1]
    k0 = K[s, idx, 0]
    k1 = K[s, idx, 1]
    c = cv[s, idx]
    ikc[0] = 1.0 - k0 * c
    ikc[1] = -k0
    ikc[2] = -k1 * c
    ikc[3] = 1.0 - k1
    for q in range(4):
        Pk[q] = P[sn, idx_prev, q]
    _mm(ikc, A, tmp)
    _mm(tmp, Pk, cross)
    if jmin <= 0:
        for q in range(4):
            out_cross[n - 1, i, q] = cross[q]

    for j in range(1, n):
        sn = slots[j - 1]
        s = slots[j]
        idx_prev = idx
        idx = anc[sn, idx_prev]
        for q in range(4):
            Pk[q] = P[s, idx, q]
            Ppn[q] = Pp[sn, idx_prev, q]
        nsing += _pinv2(Ppn[0], 0.5 * (Ppn[1] + Ppn[2]), Ppn[3], Pinv)
        # V = Pk A^T Pinv
        _mmt(Pk, A, tmp)
        _mm(tmp, Pinv, V)
        d0 = sm0 - mp[sn, idx_prev, 0]
        d1 = sm1 - mp[sn, idx_prev, 1]
        sm0 = m[s, idx, 0] + V[0] * d0 + V[1] * d1
        sm1 = m[s, idx, 1] + V[2] * d0 + V[3] * d1
        for q in range(4):
            tmp[q] = sP[q] - Ppn[q]
        _mm(V, tmp, T1)
        _mmt(T1, V, T2)
        for q in range(4):
            sP[q] = Pk[q] + T2[q]
        sP[1] = 0.5 * (sP[1] + sP[2])
        sP[2] = sP[1]

        if j >= 2:
            # cross term of position j-1 needs V_{j-1} (Vprev) and V_j
            for q in range(4):
                T3[q] = P[sn, idx_prev, q]
            _mm(A, T3, tmp)
            for q in range(4):
                tmp[q] = cross[q] - tmp[q]
            _mm(Vprev, tmp, T1)
            _mmt(T1, V, T2)
            _mmt(T3, V, T1)
            for q in range(4):
                cross[q] = T1[q] + T2[q]
            if j - 1 >= jmin:
                o = n - j
                for q in range(4):
                    out_cross[o, i, q] = cross[q]

        for q in range(4):
            Vprev[q] = V[q]
        if j >= jmin:
            o = n - 1 - j
            out_mean[o, i, 0] = sm0
            out_mean[o, i, 1] = sm1
            for q in range(4):
                out_cov[o, i, q] = sP[q]
            out_idx[o, i] = idx
            if j == n - 1:
                for q in range(4):
                    out_cross[o, i, q] = NAN
    return nsing


def circular_kernel_sums(double[::1] grid, double[::1] x, double[::1] w,
                         double[:, ::1] vals, double h, double[:, ::1] out,
                         int num_threads=1):
    """``out[g, 0] = sum_j w_j k(g - x_j)`` and ``out[g, 1 + c] = sum_j w_j k(.) vals[j, c]``
    with the unnormalised Gaussian ``k(d) = exp(-d^2 / 2h^2)`` on wrapped ``d``.

    ``grid`` must be the uniform grid ``2 pi g / M``. Each particle only visits
    nodes where the kernel does not underflow to zero, and every node sums its
    terms in particle order, so the result does not depend on ``num_threads``.
    """
    cdef Py_ssize_t M = grid.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nc = vals.shape[1]
    cdef Py_ssize_t g, j, c, k, lo, hi, blk, b0, b1
    cdef Py_ssize_t nblk = max(1, min(num_threads, M))
    cdef double d, kw, inv2h2 = 0.5 / (h * h)
    # exp(-z) is exactly 0.0 in double precision for z > 745.14
    cdef double zmax = 746.0
    cdef double r = h * (2.0 * zmax) ** 0.5 * M / TWO_PI
    cdef double ctr
    cdef bint full = 2.0 * r + 4.0 >= M
    out[:, :] = 0.0
    for blk in prange(nblk, nogil=True, num_threads=num_threads, schedule="static"):
        b0 = blk * M // nblk
        b1 = (blk + 1) * M // nblk
        for j in range(n):
            if full:
                lo = b0
                hi = b1 - 1
            else:
                ctr = x[j] * M / TWO_PI
                lo = <Py_ssize_t>floor(ctr - r) - 2
                hi = <Py_ssize_t>floor(ctr + r) + 2
            for k in range(lo, hi + 1):
                g = k % M
                if g < 0:
                    g = g + M
                if g < b0 or g >= b1:
                    continue
                d = grid[g] - x[j]
                d = d - TWO_PI * floor((d + PI) / TWO_PI)
                if d * d * inv2h2 > zmax:
                    continue
                kw = w[j] * exp(-d * d * inv2h2)
                out[g, 0] += kw
                for c in range(nc):
                    out[g, 1 + c] += kw * vals[j, c]
