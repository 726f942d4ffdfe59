"""Compiled kernels for ARMA estimation: exact Gaussian likelihood, CSS, Nelder-Mead.

Parameters are optimised in an unconstrained space: each AR and MA block is
a vector of partial autocorrelations ``tanh(u)`` mapped to polynomial
coefficients by the Durbin-Levinson recursion, so every candidate is
stationary and invertible.
"""

import numpy as np
from numba import njit

U_BOUND = 7.0  # tanh(7) = 0.9999983


@njit(cache=True)
def pacf_to_coefs(u):
    """Coefficients phi of a stationary ``1 - sum_j phi_j B^j`` from unconstrained ``u``."""
    k = u.shape[0]
    phi = np.zeros(k)
    tmp = np.zeros(k)
    for j in range(k):
        a = np.tanh(min(max(u[j], -U_BOUND), U_BOUND))
        for i in range(j):
            tmp[i] = phi[i] - a * phi[j - 1 - i]
        for i in range(j):
            phi[i] = tmp[i]
        phi[j] = a
    return phi


@njit(cache=True)
def split_params(u, p, q):
    ar = pacf_to_coefs(u[:p])
    ma = -pacf_to_coefs(u[p:p + q])
    return ar, ma


@njit(cache=True)
def _system(ar, ma):
    p = ar.shape[0]
    q = ma.shape[0]
    r = max(p, q + 1)
    T = np.zeros((r, r))
    for i in range(p):
        T[i, 0] = ar[i]
    for i in range(r - 1):
        T[i, i + 1] = 1.0
    R = np.zeros(r)
    R[0] = 1.0
    for i in range(q):
        R[i + 1] = ma[i]
    return T, R


@njit(cache=True)
def _initial_cov(T, R):
    """Stationary state covariance: solve ``P = T P T' + R R'``."""
    r = T.shape[0]
    RR = np.outer(R, R)
    if r == 1:
        P = np.empty((1, 1))
        P[0, 0] = RR[0, 0] / (1.0 - T[0, 0] * T[0, 0])
        return P
    M = np.eye(r * r) - np.kron(T, T)
    vecP = np.linalg.solve(M, RR.ravel())
    P = vecP.reshape((r, r))
    return 0.5 * (P + P.T)


@njit(cache=True)
def _solve_small(A, b):
    """Gaussian elimination with partial pivoting; NaNs when numerically singular."""
    n = b.shape[0]
    M = A.copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(M[i, j]))
    for c in range(n):
        piv = c
        for i in range(c + 1, n):
            if abs(M[i, c]) > abs(M[piv, c]):
                piv = i
        if abs(M[piv, c]) <= 1e-13 * scale:
            b[:] = np.nan
            return b
        if piv != c:
            for j in range(n):
                M[c, j], M[piv, j] = M[piv, j], M[c, j]
            b[c], b[piv] = b[piv], b[c]
        for i in range(c + 1, n):
            f = M[i, c] / M[c, c]
            for j in range(c, n):
                M[i, j] -= f * M[c, j]
            b[i] -= f * b[c]
    for i in range(n - 1, -1, -1):
        v = b[i]
        for j in range(i + 1, n):
            v -= M[i, j] * b[j]
        b[i] = v / M[i, i]
    return b


@njit(cache=True)
def _state_cov(ar, ma):
    """Stationary state covariance from autocovariances and psi weights (unit variance).

    State element i is ``sum_j ar[i+j] y[t-1-j] + R[i+j] e[t-j]`` for j >= 0,
    so its covariances follow from gamma(k), Cov(y_a, e_b) = psi[a-b] and
    white-noise e.
    """
    p = ar.shape[0]
    q = ma.shape[0]
    r = max(p, q + 1)
    c = np.zeros(r + 1)
    c[:p] = ar
    R = np.zeros(r + 1)
    R[0] = 1.0
    R[1:q + 1] = ma
    psi = np.zeros(r + 1)
    for k in range(r + 1):
        v = R[k] if k <= q else 0.0
        for i in range(1, min(k, p) + 1):
            v += ar[i - 1] * psi[k - i]
        psi[k] = v
    rhs = np.zeros(r + 1)
    for k in range(r + 1):
        v = 0.0
        for j in range(k, q + 1):
            v += R[j] * psi[j - k]
        rhs[k] = v
    gamma = np.zeros(r + 1)
    if p == 0:
        gamma[:] = rhs
    else:
        A = np.zeros((p + 1, p + 1))
        for k in range(p + 1):
            A[k, k] += 1.0
            for i in range(1, p + 1):
                A[k, abs(k - i)] -= ar[i - 1]
        g = _solve_small(A, rhs[:p + 1].copy())
        if not np.isfinite(g[0]):
            P = np.empty((r, r))
            P[:, :] = np.nan
            return P
        gamma[:p + 1] = g
        for k in range(p + 1, r + 1):
            v = rhs[k]
            for i in range(1, p + 1):
                v += ar[i - 1] * gamma[k - i]
            gamma[k] = v
    P = np.zeros((r, r))
    for i in range(r):
        for l in range(i, r):
            v = 0.0
            for j in range(r - i):
                for m in range(r - l):
                    ci = c[i + j]
                    cl = c[l + m]
                    Ri = R[i + j]
                    Rl = R[l + m]
                    v += ci * cl * gamma[abs(j - m)]
                    if m - 1 - j >= 0:
                        v += ci * Rl * psi[m - 1 - j]
                    if j - 1 - m >= 0:
                        v += Ri * cl * psi[j - 1 - m]
                    if j == m:
                        v += Ri * Rl
            P[i, l] = v
            P[l, i] = v
    return P


@njit(cache=True)
def kalman(ar, ma, y, include_mean):
    """Run the ARMA state-space filter on ``y``, profiling out the mean.

    Returns (loglik, mean, sigma2, innovations, F, final_state), where
    ``innovations`` are one-step prediction errors of the mean-adjusted
    series and ``final_state`` is the predicted state after the last point.
    The transition matrix is a companion matrix, so each update is O(r^2).
    """
    n = y.shape[0]
    p = ar.shape[0]
    q = ma.shape[0]
    r = max(p, q + 1)
    c = np.zeros(r)
    c[:p] = ar
    R = np.zeros(r)
    R[0] = 1.0
    R[1:q + 1] = ma
    P = _state_cov(ar, ma)
    if not np.isfinite(P[0, 0]):
        return -np.inf, 0.0, np.nan, np.full(n, np.nan), np.full(n, np.nan), np.zeros(r)
    M = np.empty((r, r))
    a_y = np.zeros(r)
    a_1 = np.zeros(r)
    vy = np.empty(n)
    v1 = np.empty(n)
    F = np.empty(n)
    sum_logF = 0.0
    syy = 0.0
    sy1 = 0.0
    s11 = 0.0
    steady = False
    for t in range(n):
        f = P[0, 0]
        if not f > 0.0:
            f = 1e-300
        F[t] = f
        ey = y[t] - a_y[0]
        e1 = 1.0 - a_1[0]
        vy[t] = ey
        v1[t] = e1
        sum_logF += np.log(f)
        syy += ey * ey / f
        sy1 += ey * e1 / f
        s11 += e1 * e1 / f
        # state update and prediction
        uy0 = a_y[0] + P[0, 0] / f * ey
        u10 = a_1[0] + P[0, 0] / f * e1
        for i in range(r - 1):
            a_y[i] = c[i] * uy0 + a_y[i + 1] + P[i + 1, 0] / f * ey
            a_1[i] = c[i] * u10 + a_1[i + 1] + P[i + 1, 0] / f * e1
        a_y[r - 1] = c[r - 1] * uy0
        a_1[r - 1] = c[r - 1] * u10
        if steady:
            continue
        # Pu = P - P[:,0] P[0,:] / f ; M = T Pu ; P = M T' + R R'
        for i in range(r):
            for j in range(r):
                pu0j = P[0, j] - P[0, 0] * P[0, j] / f
                m = c[i] * pu0j
                if i + 1 < r:
                    m += P[i + 1, j] - P[i + 1, 0] * P[0, j] / f
                M[i, j] = m
        change = 0.0
        for i in range(r):
            for j in range(r):
                v = M[i, 0] * c[j] + R[i] * R[j]
                if j + 1 < r:
                    v += M[i, j + 1]
                d = abs(v - P[i, j])
                if d > change:
                    change = d
                P[i, j] = v
        if change < 1e-13:
            steady = True
    mu = 0.0
    if include_mean and s11 > 0.0:
        mu = sy1 / s11
    ssr = syy - 2.0 * mu * sy1 + mu * mu * s11
    if ssr < 1e-300:
        ssr = 1e-300
    sigma2 = ssr / n
    loglik = -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0) - 0.5 * sum_logF
    innov = vy - mu * v1
    state = a_y - mu * a_1
    return loglik, mu, sigma2, innov, F, state


@njit(cache=True)
def neg_loglik(u, p, q, y, include_mean):
    ar, ma = split_params(u, p, q)
    out = kalman(ar, ma, y, include_mean)
    ll = out[0]
    if not np.isfinite(ll):
        return 1e300
    return -ll


@njit(cache=True)
def css_objective(u, p, q, y, mean):
    ar, ma = split_params(u, p, q)
    n = y.shape[0]
    e = np.zeros(n)
    ssr = 0.0
    for t in range(p, n):
        v = y[t] - mean
        for j in range(p):
            v -= ar[j] * (y[t - 1 - j] - mean)
        for j in range(q):
            if t - 1 - j >= 0:
                v -= ma[j] * e[t - 1 - j]
        e[t] = v
        ssr += v * v
    m = n - p
    if ssr <= 0.0 or m <= 0:
        return -1e300
    return 0.5 * m * np.log(ssr / m)


@njit(cache=True)
def _objective(u, p, q, y, include_mean, mean, mode):
    if mode == 0:
        return neg_loglik(u, p, q, y, include_mean)
    return css_objective(u, p, q, y, mean)


@njit(cache=True)
def nelder_mead(u0, p, q, y, include_mean, mean, mode, step, xtol, ftol, max_eval):
    """Minimise the chosen objective from ``u0``; returns (u, f, evaluations, converged)."""
    k = u0.shape[0]
    sim = np.empty((k + 1, k))
    fs = np.empty(k + 1)
    sim[0] = u0
    for i in range(k):
        sim[i + 1] = u0
        sim[i + 1, i] += step
    nev = 0
    for i in range(k + 1):
        fs[i] = _objective(sim[i], p, q, y, include_mean, mean, mode)
        nev += 1
    converged = False
    while nev < max_eval:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        spread = 0.0
        for i in range(1, k + 1):
            for j in range(k):
                d = abs(sim[i, j] - sim[0, j])
                if d > spread:
                    spread = d
        if fs[k] - fs[0] <= ftol and spread <= xtol:
            converged = True
            break
        centroid = np.zeros(k)
        for i in range(k):
            centroid += sim[i]
        centroid /= k
        xr = centroid + (centroid - sim[k])
        fr = _objective(xr, p, q, y, include_mean, mean, mode)
        nev += 1
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[k])
            fe = _objective(xe, p, q, y, include_mean, mean, mode)
            nev += 1
            if fe < fr:
                sim[k] = xe
                fs[k] = fe
            else:
                sim[k] = xr
                fs[k] = fr
        elif fr < fs[k - 1]:
            sim[k] = xr
            fs[k] = fr
        else:
            if fr < fs[k]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (sim[k] - centroid)
            fc = _objective(xc, p, q, y, include_mean, mean, mode)
            nev += 1
            if fc < min(fr, fs[k]):
                sim[k] = xc
                fs[k] = fc
            else:
                for i in range(1, k + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = _objective(sim[i], p, q, y, include_mean, mean, mode)
                    nev += 1
    best = np.argmin(fs)
    return sim[best].copy(), fs[best], nev, converged

