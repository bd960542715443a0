"""Pure-Python fallback for the compiled kernels in ``_kernel.pyx``.

Same signatures, same in-place semantics, same arithmetic order for the
compensated sums, so running sums agree bit-for-bit with the compiled path.
The refit after each row goes through LAPACK here, so derived statistics
agree only to rounding.
"""

import math

import numpy as np


def _nadd(s, c, x):
    t = s + x
    big = np.abs(s) >= np.abs(x)
    c += np.where(big, (s - t) + x, (x - t) + s)
    s[...] = t


def _nadd_scalar(yty, x):
    s = yty[0]
    t = s + x
    if abs(s) >= abs(x):
        yty[1] += (s - t) + x
    else:
        yty[1] += (x - t) + s
    yty[0] = t


def _accumulate_row(gram, gram_c, cross, cross_c, yty, w, yv):
    _nadd(gram, gram_c, np.multiply.outer(w, w))
    _nadd(cross, cross_c, w * yv)
    _nadd_scalar(yty, yv * yv)


def _cholesky(a, rank_tol):
    maxdiag = float(np.max(np.diag(a)))
    if not maxdiag > 0.0:
        return None
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.diag(L) ** 2 > rank_tol * maxdiag):
        return None
    return L


def accumulate(gram, gram_c, cross, cross_c, yty, W, y):
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    k = W.shape[1]
    if gram.shape[0] != k or cross.shape[0] != k or y.shape[0] != W.shape[0]:
        raise ValueError("dimension mismatch between state and rows")
    for r in range(W.shape[0]):
        _accumulate_row(gram, gram_c, cross, cross_c, yty, W[r], float(y[r]))


def trace(gram, gram_c, cross, cross_c, yty, n0, W, y, d, phi, logdet_phi, delta0,
          rank_tol, out_full_rank, out_delta_hat, out_s2, out_ztz, out_f, out_log_bf):
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    k = W.shape[1]
    p = k - d
    if d < 1 or d > k or gram.shape[0] != k or phi.shape[0] != d:
        raise ValueError("dimension mismatch between state and rows")
    for r in range(W.shape[0]):
        _accumulate_row(gram, gram_c, cross, cross_c, yty, W[r], float(y[r]))
        nobs = n0 + r + 1
        out_full_rank[r] = 0
        out_s2[r] = math.nan
        out_f[r] = math.nan
        out_log_bf[r] = 0.0
        out_delta_hat[r] = math.nan
        out_ztz[r] = math.nan
        if nobs <= k:
            continue
        L = _cholesky(gram + gram_c, rank_tol)
        if L is None:
            continue
        u = np.linalg.solve(L, cross + cross_c)
        gam = np.linalg.solve(L.T, u)
        rss = max(float(yty[0] + yty[1] - u @ u), 0.0)
        nu = float(nobs - k)
        L22 = L[p:, p:]
        G = L22 @ L22.T
        out_full_rank[r] = 1
        out_s2[r] = rss / nu
        out_delta_hat[r] = gam[p:]
        out_ztz[r] = G
        dt = gam[p:] - delta0
        gd = G @ dt
        qf = float(dt @ gd)
        ML = _cholesky(phi + G, 0.0)
        if ML is None:
            out_log_bf[r] = math.nan
            continue
        h = np.linalg.solve(ML, gd)
        qc = float(h @ h)
        lb = 0.5 * logdet_phi - float(np.sum(np.log(np.diag(ML))))
        if rss > 0.0:
            out_f[r] = qf / (d * rss / nu)
            lb -= 0.5 * (nu + d) * (math.log1p(max(qf - qc, 0.0) / rss) - math.log1p(qf / rss))
        elif qf > 0.0:
            out_f[r] = math.inf
            lb = math.inf
        else:
            out_f[r] = 0.0
        out_log_bf[r] = lb
