"""Compiled inner loops for fitting and resampling.

Everything here is written in the numba-compatible subset of numpy and
compiled by :mod:`semtrial._backend` unless the numba backend is disabled.
Parameter vectors use one flat layout (``P`` endpoints, primary first)::

    [nu (P), lambda (P), gamma, theta (nth), cuts (K - 2)]

``nth`` is ``P`` for an all-continuous dataset (``K == 0``) and ``P - 1`` for a
categorical primary, whose latent residual variance is fixed at 1. ``cuts``
are the free thresholds of an ordinal primary (the first cut is fixed at 0).
On the optimizer ("transformed") scale each ``theta`` is stored as
``log(theta - THETA_FLOOR)`` and the cuts as log-increments.
"""

import math

import numpy as np

from ._backend import njit, prange

THETA_FLOOR = 1e-6
BOUNDARY_THETA = 1e-4
LOG2PI = math.log(2.0 * math.pi)
LOG_SQRT_2PI = 0.5 * LOG2PI
SQRT2 = math.sqrt(2.0)

# fit status codes
FIT_OK = 0
FIT_BOUNDARY = 1
FIT_NOT_CONVERGED = 2
FIT_FAILED = 3

# bfgs exit codes
_BFGS_OK = 0
_BFGS_MAXITER = 1
_BFGS_LINESEARCH = 2
_BFGS_NONFINITE = 3
# consecutive negligible decreases before a run counts as stalled
_STALL_STEPS = 5
_STALL_RTOL = 1e-13
_STALL_GTOL_FACTOR = 10.0
_AGREE_RTOL = 1e-7        # two boundary optima this close count as the same

# columns of the per-replicate model-averaging record
REC_TAU_SAT = 0
REC_TAU_SEM = 1
REC_OMEGA_BIC = 2
REC_OMEGA_SL = 3
REC_TAU_BIC = 4
REC_TAU_SL = 5
REC_LL_SEM = 6
REC_LL_SAT = 7
REC_STATUS = 8
REC_SL_DEGRADED = 9
REC_WIDTH = 10


# --------------------------------------------------------------------------
# scalar normal helpers


@njit
def norm_pdf_scalar(x):
    return math.exp(-0.5 * x * x - LOG_SQRT_2PI)


@njit
def norm_cdf_scalar(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit
def log_norm_cdf(x):
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x / SQRT2))
    # asymptotic Mills-ratio series; relative error < 1e-12 below -30
    z = 1.0 / (x * x)
    series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)))
    return -0.5 * x * x - LOG_SQRT_2PI - math.log(-x) + math.log(series)


@njit
def log_interval_prob(v, u):
    """log{Phi(u) - Phi(v)} for v < u; either end may be infinite."""
    if v == -np.inf:
        return log_norm_cdf(u)
    if u == np.inf:
        return log_norm_cdf(-v)
    if u <= 0.0:
        lu = log_norm_cdf(u)
        lv = log_norm_cdf(v)
        return lu + math.log1p(-math.exp(lv - lu))
    if v >= 0.0:
        lu = log_norm_cdf(-v)
        lv = log_norm_cdf(-u)
        return lu + math.log1p(-math.exp(lv - lu))
    return math.log(norm_cdf_scalar(u) - norm_cdf_scalar(v))


@njit
def _ndtri_lower(p):
    # Acklam's rational approximation for p <= 0.5, then Halley refinement
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
              + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
               + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r
                - 2.759285104469687e+02) * r + 1.383577518672690e+02) * r
              - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
            (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r
                - 1.556989798598866e+02) * r + 6.680131188771972e+01) * r
              - 1.328068155288572e+01) * r + 1.0)
    for _ in range(2):
        e = norm_cdf_scalar(x) - p
        u = e * math.exp(0.5 * x * x + LOG_SQRT_2PI)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


@njit
def ndtri_scalar(p):
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p > 0.5:
        return -_ndtri_lower(1.0 - p)
    return _ndtri_lower(p)


# --------------------------------------------------------------------------
# layout helpers


@njit
def n_free(P, K):
    if K == 0:
        return 3 * P + 1
    return 3 * P + K - 2


@njit
def n_theta(P, K):
    if K == 0:
        return P
    return P - 1


@njit
def arm_stats(Y, arm, wts, c0):
    """Weighted per-arm counts, sums and cross-products of columns c0 onward."""
    n, P = Y.shape
    m = P - c0
    cnt = np.zeros(2)
    sums = np.zeros((2, m))
    cross = np.zeros((2, m, m))
    for i in range(n):
        w = wts[i]
        if w == 0.0:
            continue
        a = arm[i]
        cnt[a] += w
        for p in range(m):
            yp = Y[i, c0 + p]
            sums[a, p] += w * yp
            for q in range(p + 1):
                cross[a, p, q] += w * yp * Y[i, c0 + q]
    for a in range(2):
        for p in range(m):
            for q in range(p):
                cross[a, q, p] = cross[a, p, q]
    return cnt, sums, cross


@njit
def pooled_cov(cnt, sums, cross):
    """Pooled within-arm covariance with denominator n (the Gaussian MLE)."""
    m = sums.shape[1]
    N = cnt[0] + cnt[1]
    S = np.zeros((m, m))
    for a in range(2):
        for p in range(m):
            for q in range(m):
                S[p, q] += cross[a, p, q] - sums[a, p] * sums[a, q] / cnt[a]
    return S / N


@njit
def chol_logdet(S):
    """log|S| via an unpivoted Cholesky; -inf if a pivot is not positive."""
    m = S.shape[0]
    L = np.zeros((m, m))
    logdet = 0.0
    for j in range(m):
        d = S[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return -np.inf
        L[j, j] = math.sqrt(d)
        logdet += math.log(d)
        for i in range(j + 1, m):
            v = S[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / L[j, j]
    return logdet


@njit
def unpack(x, P, K):
    """Transformed vector -> natural vector and the full cut-point list."""
    nth = n_theta(P, K)
    nat = x.copy()
    o = 2 * P + 1
    for p in range(nth):
        nat[o + p] = THETA_FLOOR + math.exp(x[o + p])
    ncut = 0
    if K > 0:
        ncut = K - 1
    cuts = np.zeros(ncut)
    o2 = o + nth
    for j in range(1, ncut):
        cuts[j] = cuts[j - 1] + math.exp(x[o2 + j - 1])
        nat[o2 + j - 1] = cuts[j]
    return nat, cuts


@njit
def pack(nat, P, K):
    """Natural vector -> transformed vector (inverse of ``unpack``)."""
    nth = n_theta(P, K)
    x = nat.copy()
    o = 2 * P + 1
    for p in range(nth):
        x[o + p] = math.log(max(nat[o + p] - THETA_FLOOR, 1e-300))
    o2 = o + nth
    prev = 0.0
    for j in range(K - 2 if K > 2 else 0):
        x[o2 + j] = math.log(max(nat[o2 + j] - prev, 1e-300))
        prev = nat[o2 + j]
    return x


# --------------------------------------------------------------------------
# log-likelihood blocks


@njit
def _gauss_block(nu, lam, gamma, theta, cnt, sums, cross, g_nu, g_lam, g_theta):
    """One-factor Gaussian block from per-arm sufficient statistics.

    Returns the log-likelihood and its derivative in gamma; derivatives in
    nu, lambda and theta are added into the ``g_*`` arrays.
    """
    P = nu.shape[0]
    s = 0.0
    w = np.empty(P)
    for p in range(P):
        w[p] = lam[p] / theta[p]
        s += lam[p] * w[p]
    c = 1.0 / (1.0 + s)
    Vinv = np.empty((P, P))
    logdet = math.log1p(s)
    for p in range(P):
        logdet += math.log(theta[p])
        for q in range(P):
            Vinv[p, q] = -w[p] * w[q] * c
        Vinv[p, p] += 1.0 / theta[p]
    N = cnt[0] + cnt[1]
    W = np.zeros((P, P))
    m = np.empty(P)
    r = np.empty(P)
    dgam = 0.0
    for a in range(2):
        for p in range(P):
            m[p] = nu[p] + gamma * lam[p] * a
            r[p] = sums[a, p] - cnt[a] * m[p]
        for p in range(P):
            for q in range(P):
                W[p, q] += (cross[a, p, q] - sums[a, p] * m[q] - m[p] * sums[a, q]
                            + cnt[a] * m[p] * m[q])
        for p in range(P):
            vr = 0.0
            for q in range(P):
                vr += Vinv[p, q] * r[q]
            g_nu[p] += vr
            if a == 1:
                g_lam[p] += gamma * vr
                dgam += lam[p] * vr
    VW = np.zeros((P, P))
    for p in range(P):
        for q in range(P):
            acc = 0.0
            for k in range(P):
                acc += Vinv[p, k] * W[k, q]
            VW[p, q] = acc
    tr = 0.0
    for p in range(P):
        tr += VW[p, p]
    ll = -0.5 * (N * (P * LOG2PI + logdet) + tr)
    # dl/dV = -0.5 (N Vinv - Vinv W Vinv)
    G = np.empty((P, P))
    for p in range(P):
        for q in range(P):
            acc = 0.0
            for k in range(P):
                acc += VW[p, k] * Vinv[k, q]
            G[p, q] = -0.5 * (N * Vinv[p, q] - acc)
    for p in range(P):
        g_theta[p] += G[p, p]
        acc = 0.0
        for q in range(P):
            acc += G[p, q] * lam[q]
        g_lam[p] += 2.0 * acc
    return ll, dgam


@njit
def loglik_nat(nat, cuts, Y, arm, wts, K, cnt, sums, cross, g):
    """Log-likelihood at natural parameters; gradient written into ``g``.

    ``cnt, sums, cross`` are per-arm statistics of the Gaussian columns: all
    columns when ``K == 0``, the secondaries otherwise.
    """
    n, P = Y.shape
    g[:] = 0.0
    gamma = nat[2 * P]
    if K == 0:
        nu = nat[:P].copy()
        lam = nat[P:2 * P].copy()
        theta = nat[2 * P + 1:3 * P + 1].copy()
        g_nu = np.zeros(P)
        g_lam = np.zeros(P)
        g_th = np.zeros(P)
        ll, dg = _gauss_block(nu, lam, gamma, theta, cnt, sums, cross, g_nu, g_lam, g_th)
        for p in range(P):
            g[p] = g_nu[p]
            g[P + p] = g_lam[p]
            g[2 * P + 1 + p] = g_th[p]
        g[2 * P] = dg
        return ll

    Q = P - 1
    nu1 = nat[0]
    lam1 = nat[P]
    nuR = nat[1:P].copy()
    l = nat[P + 1:2 * P].copy()
    thetaR = nat[2 * P + 1:2 * P + 1 + Q].copy()
    g_nuR = np.zeros(Q)
    g_l = np.zeros(Q)
    g_th = np.zeros(Q)
    ll, dg = _gauss_block(nuR, l, gamma, thetaR, cnt, sums, cross, g_nuR, g_l, g_th)

    # conditional probit part for the latent primary given secondaries
    w = np.empty(Q)
    s = 0.0
    for q in range(Q):
        w[q] = l[q] / thetaR[q]
        s += l[q] * w[q]
    c = 1.0 / (1.0 + s)
    h = w * c
    sig = math.sqrt(1.0 + lam1 * lam1 * c)
    hnu = 0.0
    for q in range(Q):
        hnu += h[q] * nuR[q]
    base0 = nu1 - lam1 * hnu
    base1 = base0 + lam1 * gamma * c

    ncut = K - 1
    Sa = 0.0
    SaA = 0.0
    Sb = 0.0
    SaY = np.zeros(Q)
    gcut = np.zeros(ncut)
    for i in range(n):
        wi = wts[i]
        if wi == 0.0:
            continue
        a = arm[i]
        k = int(Y[i, 0])
        hy = 0.0
        for q in range(Q):
            hy += h[q] * Y[i, 1 + q]
        mu = base0 + lam1 * hy
        if a == 1:
            mu = base1 + lam1 * hy
        v = -np.inf
        u = np.inf
        if k > 0:
            v = (cuts[k - 1] - mu) / sig
        if k < K - 1:
            u = (cuts[k] - mu) / sig
        lp = log_interval_prob(v, u)
        ll += wi * lp
        gu = 0.0
        gv = 0.0
        guu = 0.0
        gvv = 0.0
        if k < K - 1:
            gu = math.exp(-0.5 * u * u - LOG_SQRT_2PI - lp)
            guu = gu * u
        if k > 0:
            gv = -math.exp(-0.5 * v * v - LOG_SQRT_2PI - lp)
            gvv = gv * v
        ai = -(gu + gv) / sig
        bi = -(guu + gvv) / sig
        Sa += wi * ai
        if a == 1:
            SaA += wi * ai
        for q in range(Q):
            SaY[q] += wi * ai * Y[i, 1 + q]
        Sb += wi * bi
        if k < K - 1:
            gcut[k] += wi * gu / sig
        if k > 0:
            gcut[k - 1] += wi * gv / sig

    Ra = np.empty(Q)
    wR = 0.0
    hR = 0.0
    for q in range(Q):
        Ra[q] = SaY[q] - Sa * nuR[q] - gamma * l[q] * SaA
        wR += w[q] * Ra[q]
        hR += h[q] * Ra[q]
    dsig_ds = -lam1 * lam1 * c * c / (2.0 * sig)

    g[0] = Sa
    g[P] = gamma * SaA + hR + Sb * lam1 * c / sig
    g[2 * P] = dg + lam1 * SaA * c
    for q in range(Q):
        g[1 + q] = g_nuR[q] - lam1 * Sa * h[q]
        g[P + 1 + q] = (g_l[q] + lam1 * (Ra[q] * c / thetaR[q] - 2.0 * w[q] * wR * c * c)
                        - lam1 * gamma * SaA * h[q] + Sb * dsig_ds * 2.0 * w[q])
        g[2 * P + 1 + q] = (g_th[q]
                            + lam1 * (-Ra[q] * l[q] * c / (thetaR[q] * thetaR[q])
                                      + w[q] * w[q] * wR * c * c)
                            - Sb * dsig_ds * w[q] * w[q])
    o2 = 2 * P + 1 + Q
    for j in range(1, ncut):
        g[o2 + j - 1] = gcut[j]
    return ll


@njit
def loglik_trans(x, Y, arm, wts, K, cnt, sums, cross):
    """Log-likelihood and gradient on the optimizer scale."""
    n, P = Y.shape
    nat, cuts = unpack(x, P, K)
    g = np.empty(x.shape[0])
    ll = loglik_nat(nat, cuts, Y, arm, wts, K, cnt, sums, cross, g)
    nth = n_theta(P, K)
    o = 2 * P + 1
    for p in range(nth):
        g[o + p] *= nat[o + p] - THETA_FLOOR
    o2 = o + nth
    ncf = 0
    if K > 2:
        ncf = K - 2
    # cut j is the running sum of exp(x) increments 0..j
    tail = 0.0
    for j in range(ncf - 1, -1, -1):
        tail += g[o2 + j]
        g[o2 + j] = tail * math.exp(x[o2 + j])
    return ll, g


@njit
def _prof_cont(z, S, delta, kf, work):
    """Mean negative log-likelihood of the continuous model with nu profiled out.

    Depends on the data only through the pooled within-arm MLE covariance
    ``S``, the arm mean difference ``delta`` and ``kf = pi0 * pi1``.
    """
    P = delta.shape[0]
    g = np.empty(2 * P + 1)
    gamma = z[P]
    M = work[0]
    Vinv = work[1]
    A = work[2]
    e = np.empty(P)
    w = np.empty(P)
    theta = np.empty(P)
    s = 0.0
    logdet = 0.0
    for p in range(P):
        theta[p] = THETA_FLOOR + math.exp(z[P + 1 + p])
        w[p] = z[p] / theta[p]
        s += z[p] * w[p]
        e[p] = delta[p] - gamma * z[p]
        logdet += math.log(theta[p])
    c = 1.0 / (1.0 + s)
    logdet += math.log1p(s)
    for p in range(P):
        for q in range(P):
            M[p, q] = S[p, q] + kf * e[p] * e[q]
            Vinv[p, q] = -c * w[p] * w[q]
        Vinv[p, p] += 1.0 / theta[p]
    tr = 0.0
    for p in range(P):
        for q in range(P):
            acc = 0.0
            for k in range(P):
                acc += Vinv[p, k] * M[k, q]
            A[p, q] = acc
        tr += A[p, p]
    f = 0.5 * (P * LOG2PI + logdet + tr)
    gg = 0.0
    for p in range(P):
        ve = 0.0
        for q in range(P):
            ve += Vinv[p, q] * e[q]
        gl = 0.0
        for q in range(P):
            b = 0.0
            for k in range(P):
                b += A[p, k] * Vinv[k, q]
            gl += (Vinv[p, q] - b) * z[q]
            if q == p:
                g[P + 1 + p] = 0.5 * (Vinv[p, p] - b) * (theta[p] - THETA_FLOOR)
        g[p] = gl - gamma * kf * ve
        gg -= kf * z[p] * ve
    g[P] = gg
    return f, g


@njit
def _objective(z, mode, Y, arm, wts, K, cnt, sums, cross, S, delta, kf, work):
    """Mode 0: continuous profile from summaries; mode 1: categorical primary."""
    if mode == 0:
        return _prof_cont(z, S, delta, kf, work)
    N = cnt[0] + cnt[1]
    ll, g = loglik_trans(z, Y, arm, wts, K, cnt, sums, cross)
    return -ll / N, -g / N


@njit
def _all_finite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return False
    return True


@njit
def _max_abs(v):
    m = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > m:
            m = a
    return m


@njit
def bfgs(z0, mode, Y, arm, wts, K, cnt, sums, cross, S, delta, kf, work, H0, gtol,
         maxiter, trace):
    """Quasi-Newton minimisation of ``_objective`` with Armijo backtracking.

    ``H0`` is an initial inverse Hessian (identity if empty). ``trace`` (may
    be empty) receives the objective at the start and after every accepted
    step. A run whose objective stops decreasing for ``_STALL_STEPS``
    accepted steps ends early; it counts as converged when the gradient is
    within ``_STALL_GTOL_FACTOR * gtol``. Returns ``(z, f, gmax, n_iter,
    n_eval, code)``.
    """
    m = z0.shape[0]
    z = z0.copy()
    f, g = _objective(z, mode, Y, arm, wts, K, cnt, sums, cross, S, delta, kf, work)
    nfev = 1
    if trace.shape[0] > 0:
        trace[0] = f
    if not (np.isfinite(f) and _all_finite(g)):
        return z, f, np.inf, 0, nfev, _BFGS_NONFINITE
    if H0.shape[0] == m:
        H = H0.copy()
        scaled = True
    else:
        H = np.eye(m)
        scaled = False
    code = _BFGS_MAXITER
    it = 0
    stall = 0
    d = np.empty(m)
    while it < maxiter:
        if _max_abs(g) <= gtol:
            code = _BFGS_OK
            break
        slope = 0.0
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc -= H[i, j] * g[j]
            d[i] = acc
            slope += g[i] * acc
        if not slope < 0.0:
            H = np.eye(m)
            scaled = False
            slope = 0.0
            for i in range(m):
                d[i] = -g[i]
                slope -= g[i] * g[i]
        dmax = _max_abs(d)
        if dmax > 2.0:
            d *= 2.0 / dmax
            slope *= 2.0 / dmax
        t = 1.0
        accepted = False
        zn = z
        fn = f
        gn = g
        for _ in range(60):
            zn = z + t * d
            fn, gn = _objective(zn, mode, Y, arm, wts, K, cnt, sums, cross, S, delta, kf,
                                work)
            nfev += 1
            if np.isfinite(fn) and fn <= f + 1e-4 * t * slope and _all_finite(gn):
                accepted = True
                break
            if np.isfinite(fn):
                # safeguarded quadratic interpolation
                denom = 2.0 * (fn - f - slope * t)
                tq = -slope * t * t / denom if denom > 0.0 else 0.5 * t
                t = min(max(tq, 0.1 * t), 0.5 * t)
            else:
                t *= 0.25
        if not accepted:
            code = _BFGS_LINESEARCH
            break
        sv = zn - z
        yv = gn - g
        sy = 0.0
        ss = 0.0
        yy = 0.0
        for i in range(m):
            sy += sv[i] * yv[i]
            ss += sv[i] * sv[i]
            yy += yv[i] * yv[i]
        if sy > 1e-10 * math.sqrt(ss * yy):
            if not scaled:
                H = np.eye(m) * (sy / yy)
                scaled = True
            rho = 1.0 / sy
            Hy = np.empty(m)
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += H[i, j] * yv[j]
                Hy[i] = acc
            yHy = 0.0
            for i in range(m):
                yHy += yv[i] * Hy[i]
            coef = rho * rho * yHy + rho
            for i in range(m):
                for j in range(m):
                    H[i, j] += -rho * (sv[i] * Hy[j] + Hy[i] * sv[j]) + coef * sv[i] * sv[j]
        if f - fn <= _STALL_RTOL * max(1.0, abs(f)):
            stall += 1
        else:
            stall = 0
        z = zn
        f = fn
        g = gn
        it += 1
        if it < trace.shape[0]:
            trace[it] = f
        if stall >= _STALL_STEPS:
            # rounding noise now dominates; accept if the gradient is nearly small enough
            if _max_abs(g) <= _STALL_GTOL_FACTOR * gtol:
                code = _BFGS_OK
            else:
                code = _BFGS_LINESEARCH
            break
    return z, f, _max_abs(g), it, nfev, code


# --------------------------------------------------------------------------
# starting values and the multistart driver


@njit
def cont_summary(cnt, sums, cross):
    """Reduce per-arm statistics to ``(S, delta, kf, ybar, pi1, N)``.

    ``S`` is the pooled within-arm MLE covariance, ``delta`` the arm mean
    difference, ``kf = pi0 * pi1`` and ``ybar`` the grand mean.
    """
    P = sums.shape[1]
    N = cnt[0] + cnt[1]
    S = pooled_cov(cnt, sums, cross)
    delta = np.empty(P)
    ybar = np.empty(P)
    for p in range(P):
        delta[p] = sums[1, p] / cnt[1] - sums[0, p] / cnt[0]
        ybar[p] = (sums[0, p] + sums[1, p]) / N
    pi1 = cnt[1] / N
    return S, delta, (1.0 - pi1) * pi1, ybar, pi1, N


@njit
def start_cont(S, delta):
    """Moment start for the continuous profile: ``[lambda, gamma, log theta]``.

    Loadings come from the leading principal component of ``S``, gamma from
    least squares of ``delta`` on the loadings and residual variances from the
    diagonal remainder (floored at 0.05).
    """
    P = delta.shape[0]
    evals, evecs = np.linalg.eigh(S)
    lam = evecs[:, P - 1] * math.sqrt(max(evals[P - 1], 1e-8))
    if lam[0] < 0.0:
        lam = -lam
    z = np.empty(2 * P + 1)
    num = 0.0
    den = 0.0
    for p in range(P):
        num += lam[p] * delta[p]
        den += lam[p] * lam[p]
        z[p] = lam[p]
        z[P + 1 + p] = math.log(max(S[p, p] - lam[p] * lam[p], 0.05) - THETA_FLOOR)
    z[P] = num / den
    return z


@njit
def start_values(Y, arm, wts, K):
    """Moment start for a categorical primary on the transformed scale.

    Correlation-scale principal component of all columns, rescaled to the
    probit metric for the primary; thresholds from arm-0 level frequencies.
    """
    n, P = Y.shape
    cnt, sums, cross = arm_stats(Y, arm, wts, 0)
    S = pooled_cov(cnt, sums, cross)
    nat = np.zeros(n_free(P, K))
    sd = np.sqrt(np.maximum(np.diag(S), 1e-12))
    R = S / np.outer(sd, sd)
    evals, evecs = np.linalg.eigh(R)
    ls = evecs[:, P - 1] * math.sqrt(max(evals[P - 1], 1e-8))
    if ls[1] < 0.0:
        ls = -ls
    rho = min(max(1.25 * ls[0], -0.9), 0.9)
    lam1 = rho / math.sqrt(1.0 - rho * rho)
    num = 0.0
    den = 0.0
    for p in range(1, P):
        lp = ls[p] * sd[p]
        nat[P + p] = lp
        nat[p] = sums[0, p] / cnt[0]
        nat[2 * P + p] = max(S[p, p] - lp * lp, 0.05)
        delta = sums[1, p] / cnt[1] - sums[0, p] / cnt[0]
        num += lp * delta
        den += lp * lp
    nat[P] = lam1
    nat[2 * P] = num / den
    sdl = math.sqrt(1.0 + lam1 * lam1)
    freq = np.zeros(K)
    for i in range(n):
        if arm[i] == 0 and wts[i] != 0.0:
            freq[int(Y[i, 0])] += wts[i]
    n0 = cnt[0]
    lo = 0.5 / n0
    cum = min(max(freq[0] / n0, lo), 1.0 - lo)
    nu1 = -sdl * ndtri_scalar(cum)
    nat[0] = nu1
    o2 = 2 * P + 1 + P - 1
    prev = 0.0
    acc = freq[0]
    for j in range(1, K - 1):
        acc += freq[j]
        cj = min(max(acc / n0, lo), 1.0 - lo)
        cut = nu1 + sdl * ndtri_scalar(cj)
        if cut < prev + 0.05:
            cut = prev + 0.05
        nat[o2 + j - 1] = cut
        prev = cut
    return pack(nat, P, K)


@njit
def _jitter(x, k):
    out = x.copy()
    for j in range(x.shape[0]):
        frac = (0.6180339887498949 * (k + 1) + 0.7548776662466927 * (j + 1)
                + 0.5698402909980532 * (k + 1) * (j + 1)) % 1.0
        out[j] += 0.5 * (2.0 * frac - 1.0)
    return out


@njit
def _normalize_sign(x, P, K):
    j = 0 if K == 0 else 1
    if x[P + j] < 0.0:
        for p in range(P):
            x[P + p] = -x[P + p]
        x[2 * P] = -x[2 * P]


@njit
def _classify(z, off, nth, code):
    if code == _BFGS_NONFINITE:
        return FIT_FAILED
    if code != _BFGS_OK:
        return FIT_NOT_CONVERGED
    for p in range(nth):
        if THETA_FLOOR + math.exp(z[off + p]) < BOUNDARY_THETA:
            return FIT_BOUNDARY
    return FIT_OK


@njit
def _multistart(mode, z_warm, use_warm, H_warm, Y, arm, wts, K, cnt, sums, cross, S, delta,
                kf, gtol, maxiter, n_jitter):
    """Run BFGS from the warm start, the moment start and jittered copies.

    Stops at the first start that converges away from the boundary, or
    when a second start lands on the same boundary optimum; otherwise keeps
    the best usable optimum. The moment start is only
    computed when needed. ``H_warm`` seeds the quasi-Newton matrix of the
    warm start only. Returns ``(z, f, gmax, n_eval, status)``.
    """
    P = Y.shape[1]
    if mode == 0:
        P = delta.shape[0]
        off = P + 1
    else:
        off = 2 * P + 1
    nth = n_theta(P, K)
    work = np.empty((3, P, P))
    trace = np.empty(0)
    best_z = z_warm.copy()
    best_f = np.inf
    best_g = np.inf
    best_status = FIT_FAILED
    total = 0
    z_mom = z_warm
    have_mom = False
    n_starts = n_jitter + 1
    if use_warm:
        n_starts += 1
    eye = np.empty((0, 0))
    for s in range(n_starts):
        k = s - 1 if use_warm else s
        H0 = eye
        if use_warm and s == 0:
            z0 = z_warm.copy()
            H0 = H_warm
        else:
            if not have_mom:
                if mode == 0:
                    z_mom = start_cont(S, delta)
                else:
                    z_mom = start_values(Y, arm, wts, K)
                have_mom = True
            z0 = z_mom.copy() if k == 0 else _jitter(z_mom, k)
        z, f, gmax, it, nfev, code = bfgs(z0, mode, Y, arm, wts, K, cnt, sums, cross, S,
                                          delta, kf, work, H0, gtol, maxiter, trace)
        total += nfev
        status = _classify(z, off, nth, code)
        better = False
        if status != FIT_FAILED:
            usable_new = status <= FIT_BOUNDARY
            usable_old = best_status <= FIT_BOUNDARY
            if usable_new and not usable_old:
                better = True
            elif usable_new == usable_old and f < best_f:
                better = True
        repeat = (status == FIT_BOUNDARY and best_status == FIT_BOUNDARY
                  and abs(f - best_f) <= _AGREE_RTOL * max(1.0, abs(best_f)))
        if better:
            best_z = z
            best_f = f
            best_g = gmax
            best_status = status
        if status == FIT_OK or repeat:
            break
    return best_z, best_f, best_g, total, best_status


@njit
def fit_cont(cnt, sums, cross, x_warm, use_warm, H_warm, gtol, maxiter, n_jitter):
    """Continuous fit from per-arm statistics; nu is profiled out.

    Returns ``(x, loglik, gmax, n_eval, status)`` with ``x`` on the
    transformed scale and sign-normalised.
    """
    S, delta, kf, ybar, pi1, N = cont_summary(cnt, sums, cross)
    P = delta.shape[0]
    Y = np.empty((0, P))
    arm = np.empty(0, dtype=np.int64)
    wts = np.empty(0)
    z_warm = x_warm[P:].copy()
    z, f, gmax, nfev, status = _multistart(0, z_warm, use_warm, H_warm, Y, arm, wts, 0, cnt,
                                           sums, cross, S, delta, kf, gtol, maxiter,
                                           n_jitter)
    x = np.empty(3 * P + 1)
    for p in range(P):
        x[p] = ybar[p] - z[P] * z[p] * pi1
    x[P:] = z
    _normalize_sign(x, P, 0)
    return x, -f * N, gmax, nfev, status


@njit
def fit_cat(Y, arm, wts, K, x_warm, use_warm, H_warm, gtol, maxiter, n_jitter):
    """Categorical-primary fit; same return convention as :func:`fit_cont`."""
    P = Y.shape[1]
    cnt, sums, cross = arm_stats(Y, arm, wts, 1)
    N = cnt[0] + cnt[1]
    S = np.empty((0, 0))
    delta = np.empty(0)
    z, f, gmax, nfev, status = _multistart(1, x_warm, use_warm, H_warm, Y, arm, wts, K, cnt,
                                           sums, cross, S, delta, 0.0, gtol, maxiter,
                                           n_jitter)
    x = z.copy()
    _normalize_sign(x, P, K)
    return x, -f * N, gmax, nfev, status


@njit
def gaussian_stats(Y, arm, wts, K):
    if K == 0:
        return arm_stats(Y, arm, wts, 0)
    return arm_stats(Y, arm, wts, 1)


@njit
def fit_kernel(Y, arm, wts, K, x_warm, use_warm, H_warm, gtol, maxiter, n_jitter):
    """Maximise the one-factor likelihood of rows with nonzero weight."""
    if K == 0:
        cnt, sums, cross = arm_stats(Y, arm, wts, 0)
        return fit_cont(cnt, sums, cross, x_warm, use_warm, H_warm, gtol, maxiter, n_jitter)
    return fit_cat(Y, arm, wts, K, x_warm, use_warm, H_warm, gtol, maxiter, n_jitter)


@njit
def warm_inverse_hessian(Y, arm, K, x, step):
    """Inverse Hessian of the optimizer objective at ``x`` (empty if not PD).

    Used to seed quasi-Newton refits on perturbed data such as resamples
    and cross-validation folds.
    """
    n, P = Y.shape
    wts = np.ones(n)
    if K == 0:
        cnt, sums, cross = arm_stats(Y, arm, wts, 0)
        S, delta, kf, ybar, pi1, N = cont_summary(cnt, sums, cross)
        z = x[P:].copy()
        mode = 0
    else:
        cnt, sums, cross = arm_stats(Y, arm, wts, 1)
        S = np.empty((0, 0))
        delta = np.empty(0)
        kf = 0.0
        z = x.copy()
        mode = 1
    work = np.empty((3, P, P))
    m = z.shape[0]
    H = np.empty((m, m))
    for j in range(m):
        zp = z.copy()
        zm = z.copy()
        zp[j] += step
        zm[j] -= step
        _, gp = _objective(zp, mode, Y, arm, wts, K, cnt, sums, cross, S, delta, kf, work)
        _, gm = _objective(zm, mode, Y, arm, wts, K, cnt, sums, cross, S, delta, kf, work)
        for i in range(m):
            H[i, j] = (gp[i] - gm[i]) / (2.0 * step)
    for i in range(m):
        for j in range(i):
            v = 0.5 * (H[i, j] + H[j, i])
            H[i, j] = v
            H[j, i] = v
    if not _all_finite(H.ravel()):
        return np.empty((0, 0))
    evals, evecs = np.linalg.eigh(H)
    if not evals[0] > 1e-8 * max(evals[m - 1], 1e-300):
        return np.empty((0, 0))
    return (evecs / evals) @ evecs.T


# --------------------------------------------------------------------------
# saturated model and model averaging


@njit
def _solve_spd(A, b):
    """Solve A x = b for SPD A (columns of b); returns (x, ok)."""
    m = A.shape[0]
    L = np.zeros((m, m))
    for j in range(m):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 1e-12 * max(A[j, j], 1e-300):
            return b.copy(), False
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, m):
            v = A[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / L[j, j]
    x = b.copy()
    ncol = b.shape[1]
    for c in range(ncol):
        for i in range(m):
            v = x[i, c]
            for k in range(i):
                v -= L[i, k] * x[k, c]
            x[i, c] = v / L[i, i]
        for i in range(m - 1, -1, -1):
            v = x[i, c]
            for k in range(i + 1, m):
                v -= L[k, i] * x[k, c]
            x[i, c] = v / L[i, i]
    return x, True


@njit
def saturated_loglik(Y, arm, K):
    """Maximised log-likelihood and parameter count of the saturated model.

    Continuous primary: joint Gaussian with arm-specific means and a common
    covariance. Categorical primary: per-arm level probabilities times a
    Gaussian regression of the secondaries on arm and primary-level dummies.
    """
    n, P = Y.shape
    ones = np.ones(n)
    if K == 0:
        cnt, sums, cross = arm_stats(Y, arm, ones, 0)
        S = pooled_cov(cnt, sums, cross)
        ld = chol_logdet(S)
        N = cnt[0] + cnt[1]
        k = 2 * P + P * (P + 1) // 2
        return -0.5 * N * (P * LOG2PI + ld + P), k
    Q = P - 1
    counts = np.zeros((2, K))
    for i in range(n):
        counts[arm[i], int(Y[i, 0])] += 1.0
    ll = 0.0
    for a in range(2):
        na = counts[a].sum()
        for k in range(K):
            if counts[a, k] > 0.0:
                ll += counts[a, k] * math.log(counts[a, k] / na)
    present = np.zeros(K, dtype=np.int64)
    for k in range(1, K):
        if counts[0, k] + counts[1, k] > 0.0:
            present[k] = 1
    ncol = 2 + present.sum()
    col_of = np.full(K, -1, dtype=np.int64)
    c = 2
    for k in range(1, K):
        if present[k] == 1:
            col_of[k] = c
            c += 1
    XtX = np.zeros((ncol, ncol))
    XtY = np.zeros((ncol, Q))
    xi = np.zeros(ncol)
    for i in range(n):
        xi[:] = 0.0
        xi[0] = 1.0
        xi[1] = arm[i]
        kk = int(Y[i, 0])
        if kk > 0:
            xi[col_of[kk]] = 1.0
        for r in range(ncol):
            for s in range(ncol):
                XtX[r, s] += xi[r] * xi[s]
            for q in range(Q):
                XtY[r, q] += xi[r] * Y[i, 1 + q]
    Bc, ok = _solve_spd(XtX, XtY)
    if not ok:
        return -np.inf, 0
    Sig = np.zeros((Q, Q))
    e = np.empty(Q)
    for i in range(n):
        xi[:] = 0.0
        xi[0] = 1.0
        xi[1] = arm[i]
        kk = int(Y[i, 0])
        if kk > 0:
            xi[col_of[kk]] = 1.0
        for q in range(Q):
            acc = Y[i, 1 + q]
            for r in range(ncol):
                acc -= xi[r] * Bc[r, q]
            e[q] = acc
        for p in range(Q):
            for q in range(Q):
                Sig[p, q] += e[p] * e[q]
    Sig /= n
    ld = chol_logdet(Sig)
    ll += -0.5 * n * (Q * LOG2PI + ld + Q)
    k = 2 * (K - 1) + Q * (K + 1) + Q * (Q + 1) // 2
    return ll, k


@njit
def sem_arm_means(x, P, K):
    """E(Y1 | A = a) for a = 0, 1 under the fitted SEM (transformed x)."""
    out = np.empty(2)
    nu1 = x[0]
    lam1 = x[P]
    gamma = x[2 * P]
    if K == 0:
        out[0] = nu1
        out[1] = nu1 + gamma * lam1
        return out
    nat, cuts = unpack(x, P, K)
    sd = math.sqrt(1.0 + lam1 * lam1)
    for a in range(2):
        m = nu1 + gamma * lam1 * a
        acc = 0.0
        for j in range(K - 1):
            acc += norm_cdf_scalar((m - cuts[j]) / sd)
        out[a] = acc
    return out


@njit
def omega_bic_scalar(bic_sem, bic_sat):
    half = 0.5 * (bic_sem - bic_sat)
    if half > 0.0:
        e = math.exp(-half)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(half))


@njit
def grid_argmin(A0, A1, A2, step):
    """Smallest grid weight minimising A0 - 2 w A1 + w^2 A2 over {0, step, ..., 1}."""
    best = np.inf
    arg = 0.0
    k = 0
    while True:
        wgt = k * step
        last = False
        if wgt >= 1.0 - 1e-12:
            wgt = 1.0
            last = True
        loss = A0 - 2.0 * wgt * A1 + wgt * wgt * A2
        if loss < best:
            best = loss
            arg = wgt
        if last:
            break
        k += 1
    return arg


@njit
def arm_means_primary(Y, arm, wts):
    s = np.zeros(2)
    c = np.zeros(2)
    for i in range(Y.shape[0]):
        if wts[i] != 0.0:
            s[arm[i]] += wts[i] * Y[i, 0]
            c[arm[i]] += wts[i]
    return s / c


@njit
def _usable(status):
    return status == FIT_OK or status == FIT_BOUNDARY


@njit
def _bic_weight(ll_sem, k_sem, ll_sat, k_sat, n):
    logn = math.log(n)
    return omega_bic_scalar(-2.0 * ll_sem + k_sem * logn, -2.0 * ll_sat + k_sat * logn)


@njit
def ma_replicate_cont(fcnt, fsums, fcross, V, grid_step, x_warm, use_warm, H_warm, gtol,
                      maxiter, n_jitter, rec, xout):
    """Model-averaging record for a continuous dataset given per-fold statistics.

    ``fcnt[v, a]``, ``fsums[v, a]`` and ``fcross[v, a]`` are the counts, sums
    and cross-products of fold ``v`` in arm ``a``; training statistics for
    fold ``v`` are totals minus fold ``v``. With ``V < 2`` only the first
    slot is used and no cross-validation is done.
    """
    P = fsums.shape[2]
    nslot = fcnt.shape[0]
    cnt = np.zeros(2)
    sums = np.zeros((2, P))
    cross = np.zeros((2, P, P))
    for v in range(nslot):
        cnt += fcnt[v]
        sums += fsums[v]
        cross += fcross[v]
    N = cnt[0] + cnt[1]
    rec[:] = np.nan
    x, ll_sem, gmax, nfev, status = fit_cont(cnt, sums, cross, x_warm, use_warm, H_warm,
                                             gtol, maxiter, n_jitter)
    xout[:] = x
    tau_sat = sums[1, 0] / cnt[1] - sums[0, 0] / cnt[0]
    S = pooled_cov(cnt, sums, cross)
    ll_sat = -0.5 * N * (P * LOG2PI + chol_logdet(S) + P)
    k_sat = 2 * P + P * (P + 1) // 2
    rec[REC_TAU_SAT] = tau_sat
    rec[REC_LL_SAT] = ll_sat
    rec[REC_STATUS] = status
    rec[REC_SL_DEGRADED] = 0.0
    if not _usable(status):
        return
    tau_sem = x[2 * P] * x[P]
    w_bic = _bic_weight(ll_sem, n_free(P, 0), ll_sat, k_sat, N)
    rec[REC_TAU_SEM] = tau_sem
    rec[REC_LL_SEM] = ll_sem
    rec[REC_OMEGA_BIC] = w_bic
    rec[REC_TAU_BIC] = w_bic * tau_sem + (1.0 - w_bic) * tau_sat
    if V < 2:
        return
    A0 = 0.0
    A1 = 0.0
    A2 = 0.0
    degraded = 0
    tc = np.empty(2)
    ts = np.empty((2, P))
    tx = np.empty((2, P, P))
    psat = np.empty(2)
    psem = np.empty(2)
    for v in range(V):
        tc[:] = cnt - fcnt[v]
        ts[:] = sums - fsums[v]
        tx[:] = cross - fcross[v]
        xv, llv, gv, nfv, stv = fit_cont(tc, ts, tx, x, True, H_warm, gtol, maxiter,
                                         n_jitter)
        for a in range(2):
            psat[a] = ts[a, 0] / tc[a]
        if _usable(stv):
            psem[0] = xv[0]
            psem[1] = xv[0] + xv[2 * P] * xv[P]
        else:
            psem[:] = psat
            degraded += 1
        # held-out residual sums expand from fold statistics
        for a in range(2):
            d = psem[a] - psat[a]
            na = fcnt[v, a]
            sa = fsums[v, a, 0]
            A0 += fcross[v, a, 0, 0] - 2.0 * psat[a] * sa + na * psat[a] * psat[a]
            A1 += d * (sa - na * psat[a])
            A2 += na * d * d
    w_sl = grid_argmin(A0, A1, A2, grid_step)
    rec[REC_OMEGA_SL] = w_sl
    rec[REC_TAU_SL] = w_sl * tau_sem + (1.0 - w_sl) * tau_sat
    rec[REC_SL_DEGRADED] = degraded


@njit
def fold_stats(Y, arm, folds, V):
    """Per-fold, per-arm counts, sums and cross-products (one slot if V < 2)."""
    n, P = Y.shape
    nslot = V if V >= 2 else 1
    fcnt = np.zeros((nslot, 2))
    fsums = np.zeros((nslot, 2, P))
    fcross = np.zeros((nslot, 2, P, P))
    for i in range(n):
        v = folds[i] if V >= 2 else 0
        _accumulate(Y, i, arm[i], fcnt[v], fsums[v], fcross[v])
    for v in range(nslot):
        _symmetrize(fcross[v])
    return fcnt, fsums, fcross


@njit
def _accumulate(Y, i, a, cnt, sums, cross):
    P = Y.shape[1]
    cnt[a] += 1.0
    for p in range(P):
        yp = Y[i, p]
        sums[a, p] += yp
        for q in range(p + 1):
            cross[a, p, q] += yp * Y[i, q]


@njit
def _symmetrize(cross):
    m = cross.shape[1]
    for a in range(2):
        for p in range(m):
            for q in range(p):
                cross[a, q, p] = cross[a, p, q]


@njit
def ma_replicate_cat(Y, arm, K, folds, V, grid_step, x_warm, use_warm, H_warm, gtol,
                     maxiter, n_jitter, rec, xout):
    """Model-averaging record for a categorical primary (fits on row weights)."""
    n, P = Y.shape
    ones = np.ones(n)
    x, ll_sem, gmax, nfev, status = fit_cat(Y, arm, ones, K, x_warm, use_warm, H_warm,
                                            gtol, maxiter, n_jitter)
    xout[:] = x
    msat = arm_means_primary(Y, arm, ones)
    tau_sat = msat[1] - msat[0]
    ll_sat, k_sat = saturated_loglik(Y, arm, K)
    rec[:] = np.nan
    rec[REC_TAU_SAT] = tau_sat
    rec[REC_LL_SAT] = ll_sat
    rec[REC_STATUS] = status
    rec[REC_SL_DEGRADED] = 0.0
    if not _usable(status):
        return
    msem = sem_arm_means(x, P, K)
    tau_sem = msem[1] - msem[0]
    w_bic = _bic_weight(ll_sem, n_free(P, K), ll_sat, k_sat, n)
    rec[REC_TAU_SEM] = tau_sem
    rec[REC_LL_SEM] = ll_sem
    rec[REC_OMEGA_BIC] = w_bic
    rec[REC_TAU_BIC] = w_bic * tau_sem + (1.0 - w_bic) * tau_sat
    if V < 2:
        return
    A0 = 0.0
    A1 = 0.0
    A2 = 0.0
    degraded = 0
    wtrain = np.empty(n)
    for v in range(V):
        for i in range(n):
            wtrain[i] = 0.0 if folds[i] == v else 1.0
        xv, llv, gv, nfv, stv = fit_cat(Y, arm, wtrain, K, x, True, H_warm, gtol, maxiter,
                                        n_jitter)
        psat = arm_means_primary(Y, arm, wtrain)
        if _usable(stv):
            psem = sem_arm_means(xv, P, K)
        else:
            psem = psat
            degraded += 1
        for i in range(n):
            if folds[i] == v:
                a = arm[i]
                r = Y[i, 0] - psat[a]
                d = psem[a] - psat[a]
                A0 += r * r
                A1 += r * d
                A2 += d * d
    w_sl = grid_argmin(A0, A1, A2, grid_step)
    rec[REC_OMEGA_SL] = w_sl
    rec[REC_TAU_SL] = w_sl * tau_sem + (1.0 - w_sl) * tau_sat
    rec[REC_SL_DEGRADED] = degraded


@njit
def ma_replicate(Y, arm, K, folds, V, grid_step, x_warm, use_warm, H_warm, gtol, maxiter,
                 n_jitter, rec, xout):
    """All point estimates for one dataset: saturated, SEM, BIC and SL weights.

    ``folds`` holds a fold id per row (ignored when ``V < 2``). Writes the
    record columns ``REC_*`` into ``rec`` and the SEM fit into ``xout``.
    """
    if K == 0:
        fcnt, fsums, fcross = fold_stats(Y, arm, folds, V)
        ma_replicate_cont(fcnt, fsums, fcross, V, grid_step, x_warm, use_warm, H_warm,
                          gtol, maxiter, n_jitter, rec, xout)
    else:
        ma_replicate_cat(Y, arm, K, folds, V, grid_step, x_warm, use_warm, H_warm, gtol,
                         maxiter, n_jitter, rec, xout)


@njit(parallel=True)
def bootstrap_ma(Y, arm, K, idx, V, grid_step, x_warm, H_warm, gtol, maxiter, n_jitter, out):
    """Model-averaging records for each resample ``idx[b]`` (rows into Y).

    Folds inside a resample are assigned by rank within arm; resampled rows
    are exchangeable, so this is a random stratified split.
    """
    B = idx.shape[0]
    n = idx.shape[1]
    P = Y.shape[1]
    nx = x_warm.shape[0]
    for b in prange(B):
        folds = np.zeros(n, dtype=np.int64)
        c0 = 0
        c1 = 0
        if V >= 2:
            for j in range(n):
                if arm[idx[b, j]] == 0:
                    folds[j] = c0 % V
                    c0 += 1
                else:
                    folds[j] = c1 % V
                    c1 += 1
        xo = np.empty(nx)
        rec = np.empty(REC_WIDTH)
        if K == 0:
            nslot = V if V >= 2 else 1
            fcnt = np.zeros((nslot, 2))
            fsums = np.zeros((nslot, 2, P))
            fcross = np.zeros((nslot, 2, P, P))
            for j in range(n):
                i = idx[b, j]
                v = folds[j]
                _accumulate(Y, i, arm[i], fcnt[v], fsums[v], fcross[v])
            for v in range(nslot):
                _symmetrize(fcross[v])
            ma_replicate_cont(fcnt, fsums, fcross, V, grid_step, x_warm, True, H_warm, gtol,
                              maxiter, n_jitter, rec, xo)
        else:
            Yb = np.empty((n, P))
            armb = np.empty(n, dtype=np.int64)
            for j in range(n):
                i = idx[b, j]
                for p in range(P):
                    Yb[j, p] = Y[i, p]
                armb[j] = arm[i]
            ma_replicate_cat(Yb, armb, K, folds, V, grid_step, x_warm, True, H_warm, gtol,
                             maxiter, n_jitter, rec, xo)
        for c in range(REC_WIDTH):
            out[b, c] = rec[c]


@njit
def hessian_trans(x, Y, arm, K, step):
    """Central-difference Hessian of the log-likelihood on the transformed scale."""
    n = Y.shape[0]
    ones = np.ones(n)
    cnt, sums, cross = gaussian_stats(Y, arm, ones, K)
    m = x.shape[0]
    H = np.empty((m, m))
    for j in range(m):
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        _, gp = loglik_trans(xp, Y, arm, ones, K, cnt, sums, cross)
        _, gm = loglik_trans(xm, Y, arm, ones, K, cnt, sums, cross)
        for i in range(m):
            H[i, j] = (gp[i] - gm[i]) / (2.0 * step)
    for i in range(m):
        for j in range(i):
            v = 0.5 * (H[i, j] + H[j, i])
            H[i, j] = v
            H[j, i] = v
    return H


@njit
def diff_means_batch(Y, arm, col):
    """Difference in means of column ``col`` and its unpooled two-sample SE."""
    s = np.zeros(2)
    ss = np.zeros(2)
    c = np.zeros(2)
    for i in range(Y.shape[0]):
        a = arm[i]
        s[a] += Y[i, col]
        c[a] += 1.0
    m0 = s[0] / c[0]
    m1 = s[1] / c[1]
    for i in range(Y.shape[0]):
        a = arm[i]
        d = Y[i, col] - (m1 if a == 1 else m0)
        ss[a] += d * d
    v0 = ss[0] / (c[0] - 1.0)
    v1 = ss[1] / (c[1] - 1.0)
    return m1 - m0, math.sqrt(v1 / c[1] + v0 / c[0])
