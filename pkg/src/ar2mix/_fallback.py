"""Pure-numpy implementations of the hot loops in ``_core.pyx``."""

from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite

_TINY = 1e-300
_LOG2 = float(np.log(2.0))


def density_row(psi, log_mod, cos1, sin1, cos2, sin2, out):
    r2 = np.exp(-2.0 * log_mod)
    omr2 = -np.expm1(-2.0 * log_mod)
    c = np.cos(2.0 * np.pi * psi)
    phi1 = 2.0 * np.exp(-log_mod) * c
    num = 2.0 * omr2 * ((1.0 + r2) ** 2 - 4.0 * c * c * r2)
    re = 1.0 - phi1 * cos1 + r2 * cos2
    im = phi1 * sin1 - r2 * sin2
    np.divide(num, np.maximum((1.0 + r2) * (re * re + im * im), _TINY), out=out)


def _chol_batch(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        for m in range(a.shape[0]):
            try:
                np.linalg.cholesky(a[m])
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite(m) from None
        raise


def whittle_loglik(g, lam, sigma2, dre, dim):
    g = np.asarray(g, dtype=float)
    lam = np.asarray(lam, dtype=float)
    dre = np.asarray(dre, dtype=float)
    dim = np.asarray(dim, dtype=float)
    K, M = g.shape
    n = lam.shape[0]
    if M == 0:
        return 0.0
    gg = np.maximum(g, _TINY)
    if K < n and sigma2 > 0.0:
        c = np.broadcast_to(lam.T @ lam, (M, K, K)).copy()
        c[:, np.arange(K), np.arange(K)] += sigma2 / gg.T
        r = _chol_batch(c)
        diag = np.diagonal(r, axis1=1, axis2=2)
        logdet = (n - K) * np.log(sigma2) + np.sum(np.log(diag**2 * gg.T), axis=1)
        ua = (dre @ lam)[..., None]
        ub = (dim @ lam)[..., None]
        ya = np.linalg.solve(r, ua)[..., 0]
        yb = np.linalg.solve(r, ub)[..., 0]
        energy = np.sum(dre**2 + dim**2, axis=1)
        quad = (energy - np.sum(ya**2, axis=1) - np.sum(yb**2, axis=1)) / sigma2
    else:
        s = np.einsum("ik,km,jk->mij", lam, gg, lam) + sigma2 * np.eye(n)
        r = _chol_batch(s)
        diag = np.diagonal(r, axis1=1, axis2=2)
        logdet = np.sum(np.log(diag**2), axis=1)
        ya = np.linalg.solve(r, dre[..., None])[..., 0]
        yb = np.linalg.solve(r, dim[..., None])[..., 0]
        quad = np.sum(ya**2, axis=1) + np.sum(yb**2, axis=1)
    terms = logdet - n * _LOG2 + 2.0 * quad
    # fixed left-to-right reduction order, matching the compiled loop
    total = 0.0
    for t in terms.tolist():
        total -= t
    return total
