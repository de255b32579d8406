"""Compiled dense kernels with a fixed summation order.

Every output element ``out[i, j]`` is accumulated as
``((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...`` left to right, which is the
order of the textbook triple loop. No fast-math flags are set, so LLVM may
vectorise across ``j`` but never reassociates or contracts to FMA.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _mm_into(a, b, out):
    # four output rows share each pass over b[p]; per-element order is unchanged
    m, k = a.shape
    n = b.shape[1]
    i = 0
    while i + 4 <= m:
        o0, o1, o2, o3 = out[i], out[i + 1], out[i + 2], out[i + 3]
        for p in range(k):
            x0, x1, x2, x3 = a[i, p], a[i + 1, p], a[i + 2, p], a[i + 3, p]
            bp = b[p]
            for j in range(n):
                bv = bp[j]
                o0[j] += x0 * bv
                o1[j] += x1 * bv
                o2[j] += x2 * bv
                o3[j] += x3 * bv
        i += 4
    while i < m:
        oi = out[i]
        for p in range(k):
            x = a[i, p]
            bp = b[p]
            for j in range(n):
                oi[j] += x * bp[j]
        i += 1


@numba.njit(cache=True, nogil=True)
def matmul_kernel(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    _mm_into(a, b, out)
    return out


@numba.njit(cache=True, nogil=True)
def bmm_kernel(a, b):
    nb, m, _ = a.shape
    out = np.zeros((nb, m, b.shape[2]))
    for t in range(nb):
        _mm_into(a[t], b[t], out[t])
    return out


@numba.njit(cache=True, nogil=True)
def _argmin_rows(x, ct):
    n, d = x.shape
    kk = ct.shape[1]
    idx = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    acc = np.empty(kk)
    for i in range(n):
        acc[:] = 0.0
        for j in range(d):
            xv = x[i, j]
            for k in range(kk):
                diff = xv - ct[j, k]
                acc[k] += diff * diff
        bi = 0
        bd = acc[0]
        for k in range(1, kk):
            if acc[k] < bd:
                bd = acc[k]
                bi = k
        idx[i] = bi
        best[i] = bd
    return idx, best


def sq_dist_argmin(x, c):
    """Nearest row of ``c`` for each row of ``x``; ties go to the lower index.

    Each distance is ``sum_d (x[i,d] - c[k,d])**2`` accumulated over ``d`` in
    order; the loop runs over centroids innermost so it vectorises without
    changing any distance's summation order.
    """
    return _argmin_rows(np.ascontiguousarray(x, dtype=np.float64),
                        np.ascontiguousarray(np.asarray(c, dtype=np.float64).T))


@numba.njit(cache=True, nogil=True)
def sq_dist_to(x, c):
    """Squared distance of every row of ``x`` to the single vector ``c``."""
    n, d = x.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            diff = x[i, j] - c[j]
            s += diff * diff
        out[i] = s
    return out
