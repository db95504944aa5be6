"""Coordinate descent on an L1-penalised weighted quadratic.

Solves, for step ``d`` and intercept step ``db``::

    min  sum_i g_i*e_i + 0.5*sum_i h_i*e_i**2 + sum_j lam_j*|beta_j + d_j|
    e = X @ d + db

which is both the Newton subproblem of L1 logistic regression and, with
``g = -y/n, h = 1/n``, the lasso itself.
"""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _coord(X, j, g, h, r, beta, d, lam_j, a_j):
    n = X.shape[0]
    grad = 0.0
    for i in range(n):
        grad += X[i, j] * (g[i] + h[i] * r[i])
    u = beta[j] + d[j]
    z = u - grad / a_j
    t = lam_j / a_j
    # a relative margin keeps rounding at the exact threshold from leaking
    # tiny nonzero coefficients (e.g. duplicated columns)
    tt = t * (1.0 + 1e-12)
    if z > tt:
        new = z - t
    elif z < -tt:
        new = z + t
    else:
        new = 0.0
    delta = new - u
    if delta != 0.0:
        d[j] += delta
        for i in range(n):
            r[i] += delta * X[i, j]
    return abs(delta)


@numba.njit(cache=True)
def _intercept(g, h, r, fit_intercept):
    if not fit_intercept:
        return 0.0, 0.0
    num = 0.0
    den = 0.0
    for i in range(g.shape[0]):
        num += g[i] + h[i] * r[i]
        den += h[i]
    if den <= 0.0:
        return 0.0, 0.0
    delta = -num / den
    for i in range(g.shape[0]):
        r[i] += delta
    return delta, abs(delta)


@numba.njit(cache=True)
def solve_subproblem(X, g, h, beta, lam, tol, max_sweeps, fit_intercept):
    """Return (d, db, sweeps_used, last_max_delta)."""
    n, p = X.shape
    d = np.zeros(p)
    r = np.zeros(n)
    db = 0.0
    a = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += h[i] * X[i, j] * X[i, j]
        a[j] = s
    sweeps = 0
    last = np.inf
    while sweeps < max_sweeps:
        # full sweep
        sweeps += 1
        delta_b, m = _intercept(g, h, r, fit_intercept)
        db += delta_b
        for j in range(p):
            if a[j] <= 0.0:
                continue
            dj = _coord(X, j, g, h, r, beta, d, lam[j], a[j])
            if dj > m:
                m = dj
        last = m
        if m < tol:
            break
        # active-set sweeps until they settle
        active = np.empty(p, dtype=np.int64)
        k = 0
        for j in range(p):
            if beta[j] + d[j] != 0.0 and a[j] > 0.0:
                active[k] = j
                k += 1
        while sweeps < max_sweeps:
            sweeps += 1
            delta_b, m = _intercept(g, h, r, fit_intercept)
            db += delta_b
            for q in range(k):
                j = active[q]
                dj = _coord(X, j, g, h, r, beta, d, lam[j], a[j])
                if dj > m:
                    m = dj
            last = m
            if m < tol:
                break
    return d, db, sweeps, last


@numba.njit(cache=True)
def _gram_coord(Q, c, q, beta, d, j, lam_j):
    a = Q[j, j]
    u = beta[j] + d[j]
    z = u - (c[j] + q[j]) / a
    t = lam_j / a
    # a relative margin keeps rounding at the exact threshold from leaking
    # tiny nonzero coefficients (e.g. duplicated columns)
    tt = t * (1.0 + 1e-12)
    if z > tt:
        new = z - t
    elif z < -tt:
        new = z + t
    else:
        new = 0.0
    delta = new - u
    if delta != 0.0:
        d[j] += delta
        for i in range(q.shape[0]):
            q[i] += delta * Q[i, j]
    return abs(delta)


@numba.njit(cache=True)
def solve_subproblem_gram(Q, c, beta, lam, tol, max_sweeps):
    """Covariance-form variant of :func:`solve_subproblem`.

    ``Q = Xa' H Xa`` and ``c = Xa' g`` for the design augmented with a
    trailing intercept column (``beta``/``lam`` include that column, with
    ``lam = 0`` for it). Each update costs O(p) instead of O(n).
    Returns (d, sweeps_used, last_max_delta).
    """
    p = Q.shape[0]
    d = np.zeros(p)
    q = np.zeros(p)
    sweeps = 0
    last = np.inf
    active = np.empty(p, dtype=np.int64)
    while sweeps < max_sweeps:
        sweeps += 1
        m = 0.0
        for j in range(p):
            if Q[j, j] <= 0.0:
                continue
            dj = _gram_coord(Q, c, q, beta, d, j, lam[j])
            if dj > m:
                m = dj
        last = m
        if m < tol:
            break
        k = 0
        for j in range(p):
            if (beta[j] + d[j] != 0.0 or lam[j] == 0.0) and Q[j, j] > 0.0:
                active[k] = j
                k += 1
        while sweeps < max_sweeps:
            sweeps += 1
            m = 0.0
            for r in range(k):
                dj = _gram_coord(Q, c, q, beta, d, active[r], lam[active[r]])
                if dj > m:
                    m = dj
            last = m
            if m < tol:
                break
    return d, sweeps, last
