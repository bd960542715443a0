# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-observation kernels.

Both entry points mutate the running sums in place, one row at a time, using
Neumaier-compensated accumulation. ``trace`` additionally refits the model after
every row and writes the per-n test statistics into caller-owned buffers.
"""

from libc.math cimport log, log1p, fabs, sqrt, INFINITY, NAN
from libc.stdlib cimport malloc, free


cdef inline void _nadd(double* s, double* c, double x) noexcept nogil:
    cdef double t = s[0] + x
    if fabs(s[0]) >= fabs(x):
        c[0] += (s[0] - t) + x
    else:
        c[0] += (x - t) + s[0]
    s[0] = t


cdef inline void _accumulate_row(double* gram, double* gram_c, double* cross,
                                 double* cross_c, double* yty, const double* w,
                                 double yv, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(k):
        for j in range(k):
            _nadd(&gram[i * k + j], &gram_c[i * k + j], w[i] * w[j])
        _nadd(&cross[i], &cross_c[i], w[i] * yv)
    _nadd(&yty[0], &yty[1], yv * yv)


cdef int _cholesky(double* a, double* L, Py_ssize_t k, double rank_tol) noexcept nogil:
    """Lower Cholesky of a k x k row-major matrix; 0 on success, -1 on a small pivot."""
    cdef Py_ssize_t i, j, m
    cdef double s, maxdiag = 0.0
    for i in range(k):
        if a[i * k + i] > maxdiag:
            maxdiag = a[i * k + i]
    if maxdiag <= 0.0:
        return -1
    for i in range(k * k):
        L[i] = 0.0
    for j in range(k):
        s = a[j * k + j]
        for m in range(j):
            s -= L[j * k + m] * L[j * k + m]
        if not (s > rank_tol * maxdiag):
            return -1
        L[j * k + j] = sqrt(s)
        for i in range(j + 1, k):
            s = a[i * k + j]
            for m in range(j):
                s -= L[i * k + m] * L[j * k + m]
            L[i * k + j] = s / L[j * k + j]
    return 0


def accumulate(double[:, ::1] gram, double[:, ::1] gram_c, double[::1] cross,
               double[::1] cross_c, double[::1] yty, const double[:, ::1] W,
               const double[::1] y):
    cdef Py_ssize_t n = W.shape[0], k = W.shape[1], r
    if gram.shape[0] != k or cross.shape[0] != k or y.shape[0] != n:
        raise ValueError("dimension mismatch between state and rows")
    with nogil:
        for r in range(n):
            _accumulate_row(&gram[0, 0], &gram_c[0, 0], &cross[0], &cross_c[0],
                            &yty[0], &W[r, 0], y[r], k)


def trace(double[:, ::1] gram, double[:, ::1] gram_c, double[::1] cross,
          double[::1] cross_c, double[::1] yty, long n0,
          const double[:, ::1] W, const double[::1] y, int d,
          const double[:, ::1] phi, double logdet_phi, const double[::1] delta0,
          double rank_tol,
          signed char[::1] out_full_rank, double[:, ::1] out_delta_hat,
          double[::1] out_s2, double[:, :, ::1] out_ztz, double[::1] out_f,
          double[::1] out_log_bf):
    cdef Py_ssize_t n = W.shape[0], k = W.shape[1], p = k - d
    cdef Py_ssize_t r, i, j, m
    cdef long nobs
    cdef double nu, rss, yy, qf, qc, s, v, lb
    if d < 1 or d > k or gram.shape[0] != k or phi.shape[0] != d:
        raise ValueError("dimension mismatch between state and rows")
    cdef double* buf = <double*> malloc((2 * k * k + 3 * k + 3 * d * d + 3 * d) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* A = buf
    cdef double* L = A + k * k
    cdef double* u = L + k * k
    cdef double* gam = u + k
    cdef double* cr = gam + k
    cdef double* G = cr + k
    cdef double* M = G + d * d
    cdef double* ML = M + d * d
    cdef double* dt = ML + d * d
    cdef double* gd = dt + d
    cdef double* h = gd + d
    try:
        with nogil:
            for r in range(n):
                _accumulate_row(&gram[0, 0], &gram_c[0, 0], &cross[0], &cross_c[0],
                                &yty[0], &W[r, 0], y[r], k)
                nobs = n0 + r + 1
                out_full_rank[r] = 0
                out_s2[r] = NAN
                out_f[r] = NAN
                out_log_bf[r] = 0.0
                for i in range(d):
                    out_delta_hat[r, i] = NAN
                    for j in range(d):
                        out_ztz[r, i, j] = NAN
                if nobs <= k:
                    continue
                for i in range(k):
                    for j in range(k):
                        A[i * k + j] = gram[i, j] + gram_c[i, j]
                for i in range(k):
                    cr[i] = cross[i] + cross_c[i]
                yy = yty[0] + yty[1]
                if _cholesky(A, L, k, rank_tol) != 0:
                    continue
                # forward solve L u = cross, back solve L' gam = u
                for i in range(k):
                    s = cr[i]
                    for m in range(i):
                        s -= L[i * k + m] * u[m]
                    u[i] = s / L[i * k + i]
                for i in range(k - 1, -1, -1):
                    s = u[i]
                    for m in range(i + 1, k):
                        s -= L[m * k + i] * gam[m]
                    gam[i] = s / L[i * k + i]
                rss = yy
                for i in range(k):
                    rss -= u[i] * u[i]
                if rss < 0.0:
                    rss = 0.0
                nu = <double>(nobs - k)
                out_full_rank[r] = 1
                out_s2[r] = rss / nu
                # Z~'Z~ = L22 L22'
                for i in range(d):
                    out_delta_hat[r, i] = gam[p + i]
                    dt[i] = gam[p + i] - delta0[i]
                    for j in range(d):
                        s = 0.0
                        for m in range(j + 1 if j < i else i + 1):
                            s += L[(p + i) * k + p + m] * L[(p + j) * k + p + m]
                        G[i * d + j] = s
                        out_ztz[r, i, j] = s
                # qf = dt' G dt
                qf = 0.0
                for i in range(d):
                    s = 0.0
                    for j in range(d):
                        s += G[i * d + j] * dt[j]
                    gd[i] = s
                    qf += dt[i] * s
                for i in range(d * d):
                    M[i] = phi[i // d, i % d] + G[i]
                if _cholesky(M, ML, d, 0.0) != 0:
                    out_log_bf[r] = NAN
                    continue
                v = 0.0
                for i in range(d):
                    v += log(ML[i * d + i])
                lb = 0.5 * logdet_phi - v
                # qc = gd' (Phi + G)^{-1} gd
                qc = 0.0
                for i in range(d):
                    s = gd[i]
                    for m in range(i):
                        s -= ML[i * d + m] * h[m]
                    h[i] = s / ML[i * d + i]
                    qc += h[i] * h[i]
                if rss > 0.0:
                    out_f[r] = qf / (d * rss / nu)
                    v = qf - qc
                    if v < 0.0:
                        v = 0.0
                    lb -= 0.5 * (nu + d) * (log1p(v / rss) - log1p(qf / rss))
                elif qf > 0.0:
                    out_f[r] = INFINITY
                    lb = INFINITY
                else:
                    out_f[r] = 0.0
                out_log_bf[r] = lb
    finally:
        free(buf)
