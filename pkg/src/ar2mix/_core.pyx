# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: kernel density rows and the Whittle log-likelihood.

Signatures and semantics mirror ``ar2mix._fallback`` exactly.
"""

from libc.math cimport log, sqrt, exp, expm1, cos, M_PI

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double TINY = 1e-300
cdef double LOG2 = 0.6931471805599453


from ar2mix.errors import NotPositiveDefinite


def density_row(double psi, double log_mod, const double[:] cos1, const double[:] sin1,
                const double[:] cos2, const double[:] sin2, double[:] out):
    """Fill ``out`` with the normalized AR(2) density on precomputed trig tables."""
    cdef Py_ssize_t m, M = out.shape[0]
    cdef double r2 = exp(-2.0 * log_mod)
    cdef double omr2 = -expm1(-2.0 * log_mod)
    cdef double c = cos(2.0 * M_PI * psi)
    cdef double phi1 = 2.0 * exp(-log_mod) * c
    cdef double num = 2.0 * omr2 * ((1.0 + r2) * (1.0 + r2) - 4.0 * c * c * r2)
    cdef double re, im, den
    with nogil:
        for m in range(M):
            re = 1.0 - phi1 * cos1[m] + r2 * cos2[m]
            im = phi1 * sin1[m] - r2 * sin2[m]
            den = (1.0 + r2) * (re * re + im * im)
            if den < TINY:
                den = TINY
            out[m] = num / den


def whittle_loglik(g, lam, double sigma2, dre, dim):
    """Whittle log-likelihood of Fourier data under ``S = lam diag(g) lam^T + sigma2 I``.

    ``g`` is ``(K, M)``, ``lam`` is ``(n, K)``, ``dre``/``dim`` are ``(M, n)``.
    The covariance of each Fourier vector is taken as ``S / 2`` (one-sided S).
    Fortran-ordered ``dre``/``dim`` avoid a transpose copy.
    """
    cdef const double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, ::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef const double[:, ::1] av = np.ascontiguousarray(np.asarray(dre, dtype=np.float64).T)
    cdef const double[:, ::1] bv = np.ascontiguousarray(np.asarray(dim, dtype=np.float64).T)
    cdef Py_ssize_t K = gv.shape[0], M = gv.shape[1], n = lv.shape[0]
    if M == 0:
        return 0.0
    cdef bint lowrank = (K < n) and (sigma2 > 0.0)
    cdef Py_ssize_t w = K if lowrank else n
    cdef double[::1] work = np.empty((w * (w + 1) // 2 + 4 * w + 3) * M)
    cdef Py_ssize_t bad
    with nogil:
        if lowrank:
            bad = _loglik_lowrank(&gv[0, 0], &lv[0, 0], sigma2, &av[0, 0], &bv[0, 0], K, M, n, &work[0])
        else:
            bad = _loglik_direct(&gv[0, 0], &lv[0, 0], sigma2, &av[0, 0], &bv[0, 0], K, M, n, &work[0])
    if bad >= 0:
        raise NotPositiveDefinite(bad)
    cdef double total = 0.0
    cdef Py_ssize_t m
    for m in range(M):
        total -= work[m]
    return total


# Layout: every per-frequency quantity is a row of length M, so the inner loops
# run over frequencies and vectorize.  ``c`` holds the packed lower triangle.

cdef inline Py_ssize_t _tri(Py_ssize_t i, Py_ssize_t j) nogil:
    return i * (i + 1) // 2 + j


cdef Py_ssize_t _factor(double* c, double* dinv, double* ok, Py_ssize_t k, Py_ssize_t M) nogil:
    # batched in-place Cholesky; returns the first failing frequency or -1
    cdef Py_ssize_t i, j, p, m, bad = -1
    cdef double* cj
    cdef double* ci
    cdef double* di
    for m in range(M):
        ok[m] = 1.0
    for j in range(k):
        cj = c + _tri(j, j) * M
        for p in range(j):
            ci = c + _tri(j, p) * M
            for m in range(M):
                cj[m] -= ci[m] * ci[m]
        di = dinv + j * M
        for m in range(M):
            if not cj[m] > 0.0:
                ok[m] = 0.0
                cj[m] = 1.0
            cj[m] = sqrt(cj[m])
            di[m] = 1.0 / cj[m]
        for i in range(j + 1, k):
            ci = c + _tri(i, j) * M
            for p in range(j):
                for m in range(M):
                    ci[m] -= c[_tri(i, p) * M + m] * c[_tri(j, p) * M + m]
            for m in range(M):
                ci[m] *= di[m]
    for m in range(M):
        if ok[m] == 0.0:
            bad = m
            break
    return bad


cdef void _solve_acc(const double* c, const double* dinv, double* y, double* acc,
                     Py_ssize_t k, Py_ssize_t M) nogil:
    # y <- L^{-1} y row by row, acc += |y|^2
    cdef Py_ssize_t i, p, m
    cdef double* yi
    cdef const double* cip
    cdef const double* yp
    for i in range(k):
        yi = y + i * M
        for p in range(i):
            cip = c + _tri(i, p) * M
            yp = y + p * M
            for m in range(M):
                yi[m] -= cip[m] * yp[m]
        for m in range(M):
            yi[m] *= dinv[i * M + m]
            acc[m] += yi[m] * yi[m]


cdef void _logdiag(const double* c, const double* g, double* out, Py_ssize_t k, Py_ssize_t M) nogil:
    # out += log prod_i (c_ii^2 g_i), renormalized every few factors
    cdef Py_ssize_t i, m, start = 0, stop
    cdef double* prod = out + M
    cdef double x
    while start < k:
        stop = start + 4 if start + 4 < k else k
        for m in range(M):
            prod[m] = 1.0
        for i in range(start, stop):
            for m in range(M):
                x = c[_tri(i, i) * M + m]
                if g != NULL:
                    x = x * x * (g[i * M + m] if g[i * M + m] > TINY else TINY)
                else:
                    x = x * x
                prod[m] *= x
        for m in range(M):
            out[m] += log(prod[m])
        start = stop


cdef Py_ssize_t _loglik_lowrank(const double* g, const double* lam, double sigma2,
                                const double* a, const double* b,
                                Py_ssize_t K, Py_ssize_t M, Py_ssize_t n, double* work) nogil:
    # Woodbury / determinant lemma through C = lam^T lam + sigma2 diag(1/g)
    cdef Py_ssize_t i, j, p, m, bad
    cdef double* term = work
    cdef double* c = work + 2 * M
    cdef double* ua = c + (K * (K + 1) // 2) * M
    cdef double* ub = ua + K * M
    cdef double* dinv = ub + K * M
    cdef double* acc = dinv + K * M
    cdef double* ci
    cdef double q, l
    cdef const double* ap
    cdef const double* bp
    for i in range(K):
        for j in range(i + 1):
            q = 0.0
            for p in range(n):
                q += lam[p * K + i] * lam[p * K + j]
            ci = c + _tri(i, j) * M
            for m in range(M):
                ci[m] = q
        ci = c + _tri(i, i) * M
        for m in range(M):
            ci[m] += sigma2 / (g[i * M + m] if g[i * M + m] > TINY else TINY)
    for m in range(M):
        acc[m] = 0.0
    for i in range(K):
        for m in range(M):
            ua[i * M + m] = 0.0
            ub[i * M + m] = 0.0
    for p in range(n):
        ap = a + p * M
        bp = b + p * M
        for m in range(M):
            acc[m] += ap[m] * ap[m] + bp[m] * bp[m]
        for i in range(K):
            l = lam[p * K + i]
            if l != 0.0:
                for m in range(M):
                    ua[i * M + m] += l * ap[m]
                    ub[i * M + m] += l * bp[m]
    bad = _factor(c, dinv, term, K, M)
    if bad >= 0:
        return bad
    # acc now holds energy; subtract the projected parts
    for m in range(M):
        term[m] = 0.0
    _solve_acc(c, dinv, ua, term, K, M)
    _solve_acc(c, dinv, ub, term, K, M)
    for m in range(M):
        acc[m] = (acc[m] - term[m]) / sigma2
        term[m] = (n - K) * log(sigma2) - n * LOG2 + 2.0 * acc[m]
    _logdiag(c, g, term, K, M)
    return -1


cdef Py_ssize_t _loglik_direct(const double* g, const double* lam, double sigma2,
                               const double* a, const double* b,
                               Py_ssize_t K, Py_ssize_t M, Py_ssize_t n, double* work) nogil:
    cdef Py_ssize_t i, j, p, m, bad
    cdef double* term = work
    cdef double* c = work + 2 * M
    cdef double* ya = c + (n * (n + 1) // 2) * M
    cdef double* yb = ya + n * M
    cdef double* dinv = yb + n * M
    cdef double* acc = dinv + n * M
    cdef double* ci
    cdef double l
    cdef const double* gp
    for i in range(n):
        for j in range(i + 1):
            ci = c + _tri(i, j) * M
            for m in range(M):
                ci[m] = 0.0
            for p in range(K):
                l = lam[i * K + p] * lam[j * K + p]
                if l != 0.0:
                    gp = g + p * M
                    for m in range(M):
                        ci[m] += l * (gp[m] if gp[m] > TINY else TINY)
        ci = c + _tri(i, i) * M
        for m in range(M):
            ci[m] += sigma2
    for i in range(n * M):
        ya[i] = a[i]
        yb[i] = b[i]
    bad = _factor(c, dinv, term, n, M)
    if bad >= 0:
        return bad
    for m in range(M):
        acc[m] = 0.0
    _solve_acc(c, dinv, ya, acc, n, M)
    _solve_acc(c, dinv, yb, acc, n, M)
    for m in range(M):
        term[m] = -n * LOG2 + 2.0 * acc[m]
    _logdiag(c, NULL, term, n, M)
    return -1
