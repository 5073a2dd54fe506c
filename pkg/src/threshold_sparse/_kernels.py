"""Numba kernels for the fixed-tau solvers.

Everything here is deterministic: coordinates are swept in ascending index
order and no randomness or threading enters the iteration.
"""

import math

import numpy as np
from numba import njit

# status codes shared by both solvers
OK = 0
MAXITER = 1
DIVERGED = 2


@njit(cache=True)
def _cd_full_sweep(G, b, alpha, q, thr, locked, active):
    """One full cyclic pass of coordinate descent on
    0.5 a'Ga - b'a + sum_j thr_j |a_j|.

    ``q`` maintains G @ alpha incrementally. Returns (max |step|, number of
    nonzero coordinates) and records the nonzero indices in ``active``.
    """
    m = alpha.shape[0]
    nact = 0
    maxd = 0.0
    for j in range(m):
        if locked[j]:
            if alpha[j] != 0.0:
                d = -alpha[j]
                alpha[j] = 0.0
                for k in range(m):
                    q[k] += G[k, j] * d
            continue
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        c = b[j] - q[j] + gjj * alpha[j]
        t = thr[j]
        if c > t:
            new = (c - t) / gjj
        elif c < -t:
            new = (c + t) / gjj
        else:
            new = 0.0
        d = new - alpha[j]
        if d != 0.0:
            alpha[j] = new
            for k in range(m):
                q[k] += G[k, j] * d
            if abs(d) > maxd:
                maxd = abs(d)
        if new != 0.0:
            active[nact] = j
            nact += 1
    return maxd, nact


@njit(cache=True)
def _cd_active_sweep(G, b, alpha, q, thr, active, nact):
    """One pass over the recorded nonzero coordinates only."""
    maxd = 0.0
    m = alpha.shape[0]
    for i in range(nact):
        j = active[i]
        gjj = G[j, j]
        c = b[j] - q[j] + gjj * alpha[j]
        t = thr[j]
        if c > t:
            new = (c - t) / gjj
        elif c < -t:
            new = (c + t) / gjj
        else:
            new = 0.0
        d = new - alpha[j]
        if d != 0.0:
            alpha[j] = new
            for k in range(m):
                q[k] += G[k, j] * d
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd


@njit(cache=True)
def _cd_weighted_lasso(G, b, alpha, q, thr, locked, active, max_sweeps, tol):
    """Coordinate descent until steps fall below ``tol``, up to ``max_sweeps``.

    Alternates full sweeps (which refresh the nonzero set) with cheap
    active-set sweeps; a solution only counts as settled when a full sweep
    moves nothing beyond ``tol``.
    """
    sweeps = 0
    while sweeps < max_sweeps:
        maxd, nact = _cd_full_sweep(G, b, alpha, q, thr, locked, active)
        sweeps += 1
        if maxd <= tol:
            return sweeps
        while sweeps < max_sweeps:
            maxd = _cd_active_sweep(G, b, alpha, q, thr, active, nact)
            sweeps += 1
            if maxd <= tol:
                break
    return sweeps


@njit(cache=True)
def _prox_check(y, w, c, gamma, z):
    """z_i <- argmin_z c * rho_gamma(y_i, z) + 0.5 (z - w_i)^2, elementwise."""
    for i in range(y.shape[0]):
        r = y[i] - w[i]
        if r > c * gamma:
            u = r - c * gamma
        elif r < -c * (1.0 - gamma):
            u = r + c * (1.0 - gamma)
        else:
            u = 0.0
        z[i] = y[i] - u


@njit(cache=True)
def _kkt_quantile(X, XT, y, t, gamma, pen, locked, alpha, band):
    """Interval-arithmetic KKT violation of the quantile problem at alpha.

    Residuals within ``band`` of the kink contribute the full subgradient
    interval [-gamma, 1-gamma]; elsewhere the derivative is a point value.
    """
    n, m = X.shape
    s = np.empty(n)
    n_kink = 0
    for i in range(n):
        u = y[i] - t[i]
        if abs(u) <= band:
            s[i] = 0.0
            n_kink += 1
        elif u <= 0.0:
            s[i] = 1.0 - gamma
        else:
            s[i] = -gamma
    g = (XT @ s) / n
    lo = g.copy()
    hi = g.copy()
    if n_kink > 0:
        for i in range(n):
            u = y[i] - t[i]
            if abs(u) <= band:
                for j in range(m):
                    xij = X[i, j]
                    if xij >= 0.0:
                        lo[j] += -gamma * xij / n
                        hi[j] += (1.0 - gamma) * xij / n
                    else:
                        lo[j] += (1.0 - gamma) * xij / n
                        hi[j] += -gamma * xij / n
    worst = 0.0
    for j in range(m):
        if locked[j]:
            continue
        if alpha[j] > 0.0:
            target = -pen[j]
        elif alpha[j] < 0.0:
            target = pen[j]
        else:
            v = lo[j] - pen[j]
            w2 = -pen[j] - hi[j]
            v = max(max(v, w2), 0.0)
            if v > worst:
                worst = v
            continue
        v = max(max(lo[j] - target, target - hi[j]), 0.0)
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def admm_quantile(X, XT, G, y, gamma, pen, locked, alpha, rho, adaptive,
                  sweeps, max_iter, tol_primal, tol_dual):
    """Scaled-dual ADMM on the splitting z = X(tau) alpha.

    The alpha update is the inexact weighted-lasso coordinate descent above
    (swept to tolerance, at most ``sweeps`` passes per outer iteration); the
    z update is the closed-form check-loss prox; the dual update is
    standard, with optional residual balancing of rho during the first
    iterations. Converges when the iterate is certified optimal: every
    primal residual coordinate within ``tol_primal`` and the interval KKT
    violation (kink band ``tol_primal``) within ``tol_dual``, checked every
    10 iterations. Returns (iterations, status, rho, z) with ``alpha``
    updated in place.
    """
    n, m = X.shape
    thr = np.empty(m)
    active = np.empty(m, dtype=np.int64)
    sweep_tol = 1e-4 * tol_primal
    q = G @ alpha
    z = X @ alpha
    u = np.zeros(n)
    tz = XT @ z
    tu = np.zeros(m)
    it = 0
    status = MAXITER
    for it in range(1, max_iter + 1):
        for j in range(m):
            thr[j] = pen[j] / rho
        b = tz - tu
        _cd_weighted_lasso(G, b, alpha, q, thr, locked, active, sweeps, sweep_tol)
        if it % 128 == 0:
            # flush accumulated drift in the incrementally maintained vectors
            q = G @ alpha
            tu = XT @ u
        xa = X @ alpha
        c = 1.0 / (n * rho)
        w = xa + u
        tz_old = tz
        _prox_check(y, w, c, gamma, z)
        tz = XT @ z
        r = xa - z
        u += r
        tu = tu + (q - tz)  # X' u update via X' X alpha == G alpha == q
        r_norm = np.linalg.norm(r)
        if not math.isfinite(r_norm):
            status = DIVERGED
            break
        if it % 10 == 0:
            r_inf = 0.0
            for i in range(n):
                r_inf = max(r_inf, abs(r[i]))
            if r_inf <= tol_primal and \
                    _kkt_quantile(X, XT, y, xa, gamma, pen, locked, alpha, tol_primal) <= tol_dual:
                status = OK
                break
            if adaptive and it <= 1000:
                s_norm = rho * np.linalg.norm(tz - tz_old)
                if r_norm > 10.0 * s_norm:
                    rho *= 2.0
                    u *= 0.5
                    tu *= 0.5
                elif s_norm > 10.0 * r_norm:
                    rho *= 0.5
                    u *= 2.0
                    tu *= 2.0
    return it, status, rho, z


@njit(cache=True)
def _logistic_smooth(t, y, n):
    """(1/n) sum softplus(t_i) - y_i t_i, overflow-safe."""
    s = 0.0
    for i in range(n):
        ti = t[i]
        sp = max(ti, 0.0) + math.log1p(math.exp(-abs(ti)))
        s += sp - y[i] * ti
    return s / n


@njit(cache=True)
def _pen_l1(a, pen):
    s = 0.0
    for j in range(a.shape[0]):
        s += pen[j] * abs(a[j])
    return s


@njit(cache=True)
def _kkt_logistic(X, XT, y, x, pen, locked, n):
    """Exact stationarity violation of the penalized logistic problem at x."""
    t = X @ x
    r = np.empty(n)
    for i in range(n):
        ti = t[i]
        if ti >= 0.0:
            g = 1.0 / (1.0 + math.exp(-ti))
        else:
            e = math.exp(ti)
            g = e / (1.0 + e)
        r[i] = g - y[i]
    grad = (XT @ r) / n
    worst = 0.0
    for j in range(x.shape[0]):
        if locked[j]:
            continue
        if x[j] > 0.0:
            v = abs(grad[j] + pen[j])
        elif x[j] < 0.0:
            v = abs(grad[j] - pen[j])
        else:
            v = max(abs(grad[j]) - pen[j], 0.0)
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def fista_logistic(X, XT, y, pen, locked, x, L0, max_iter, rel_tol, kkt_tol):
    """Monotone accelerated proximal gradient for the penalized logistic loss.

    Uses the power-method estimate ``L0`` as the initial step curvature with
    doubling backtracking on the function value. A candidate that would
    increase the objective beyond rounding is rejected and the momentum
    restarted, so the recorded objective sequence is non-increasing (within
    1e-12). Converges once an accepted step improves the objective by less
    than ``rel_tol`` relatively and the stationarity violation is within
    ``kkt_tol``; if the objective stalls repeatedly without reaching that
    certificate (coefficients drifting to infinity under separation, say)
    the solve stops unconverged. Returns (iterations, status, fvals, k)
    with ``x`` updated in place; ``fvals[:k]`` is the objective path.
    """
    n, m = X.shape
    L = L0
    yk = x.copy()
    x_old = x.copy()
    tk = 1.0
    fvals = np.empty(max_iter + 1)
    Fx = _logistic_smooth(X @ x, y, n) + _pen_l1(x, pen)
    fvals[0] = Fx
    k = 1
    status = MAXITER
    it = 0
    stalls = 0
    z = np.empty(m)
    for it in range(1, max_iter + 1):
        ty = X @ yk
        r = np.empty(n)
        for i in range(n):
            ti = ty[i]
            if ti >= 0.0:
                g = 1.0 / (1.0 + math.exp(-ti))
            else:
                e = math.exp(ti)
                g = e / (1.0 + e)
            r[i] = g - y[i]
        grad = (XT @ r) / n
        fy = _logistic_smooth(ty, y, n)
        while True:
            step = 1.0 / L
            for j in range(m):
                if locked[j]:
                    z[j] = 0.0
                    continue
                v = yk[j] - step * grad[j]
                t = pen[j] * step
                if v > t:
                    z[j] = v - t
                elif v < -t:
                    z[j] = v + t
                else:
                    z[j] = 0.0
            fz = _logistic_smooth(X @ z, y, n)
            quad = fy
            nrm = 0.0
            for j in range(m):
                d = z[j] - yk[j]
                quad += grad[j] * d
                nrm += d * d
            quad += 0.5 * L * nrm
            if fz <= quad + 1e-12 or L > 1e15:
                break
            L *= 2.0
        Fz = fz + _pen_l1(z, pen)
        if not math.isfinite(Fz):
            status = DIVERGED
            break
        if Fz <= Fx + 1e-12:
            x_old[:] = x
            x[:] = z
            rel = max(Fx - Fz, 0.0) / max(1.0, abs(Fz))
            Fx = Fz
            fvals[k] = Fx
            k += 1
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            for j in range(m):
                yk[j] = x[j] + (tk / t_next) * (z[j] - x[j]) \
                    + ((tk - 1.0) / t_next) * (x[j] - x_old[j])
            tk = t_next
            if rel < rel_tol:
                if _kkt_logistic(X, XT, y, x, pen, locked, n) <= kkt_tol:
                    status = OK
                    break
                stalls += 1
                if stalls >= 25:
                    break
        else:
            # momentum overshoot: restart; the next step is plain descent
            fvals[k] = Fx
            k += 1
            yk[:] = x
            tk = 1.0
    return it, status, fvals, k
