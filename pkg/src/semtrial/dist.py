"""Gaussian primitives: univariate normal functions, Cholesky-based MVN
log-density and single-coordinate conditional Gaussians."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import special

LOG2PI = math.log(2.0 * math.pi)


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix that must be positive definite is not.

    ``pivot`` is the zero-based index of the first non-positive Cholesky pivot.
    """

    def __init__(self, pivot, value):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite: pivot {pivot} = {value:.3e}")


@dataclass(frozen=True)
class ConditionalGaussian:
    mean: float
    variance: float


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def norm_cdf(x):
    out = special.ndtr(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def norm_quantile(p):
    """Inverse of :func:`norm_cdf`; ``p`` must lie strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise ValueError("norm_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return out if out.ndim else float(out)


def cholesky(cov):
    """Lower Cholesky factor; raises :class:`SingularMatrixError` with the
    offending pivot instead of numpy's anonymous ``LinAlgError``."""
    a = np.asarray(cov, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("covariance must be a square matrix")
    m = a.shape[0]
    L = np.zeros_like(a)
    for j in range(m):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise SingularMatrixError(j, d)
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def check_cov(cov, rtol=1e-12, pivot_tol=1e-10):
    """Validate symmetry and positive semi-definiteness of a covariance matrix.

    Pivots are computed on the correlation scale and may dip to ``-pivot_tol``.
    """
    a = np.asarray(cov, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("covariance must be a square matrix")
    scale = max(np.max(np.abs(a)), 1e-300)
    if np.max(np.abs(a - a.T)) > rtol * scale:
        raise ValueError("covariance is not symmetric")
    d = np.sqrt(np.clip(np.diag(a), 1e-300, None))
    r = a / np.outer(d, d)
    m = r.shape[0]
    L = np.zeros_like(r)
    for j in range(m):
        piv = r[j, j] - L[j, :j] @ L[j, :j]
        if piv < -pivot_tol:
            raise SingularMatrixError(j, piv)
        if piv <= 0.0:
            continue
        L[j, j] = math.sqrt(piv)
        L[j + 1:, j] = (r[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return a


def _forward(L, b):
    out = np.empty_like(b)
    for i in range(L.shape[0]):
        out[i] = (b[i] - L[i, :i] @ out[:i]) / L[i, i]
    return out


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log-density evaluated through a Cholesky factor."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not (x.shape == mean.shape and cov.shape == (x.size, x.size)):
        raise ValueError("dimension mismatch between x, mean and cov")
    L = cholesky(cov)
    z = _forward(L, x - mean)
    P = x.size
    return float(-0.5 * P * LOG2PI - np.sum(np.log(np.diag(L))) - 0.5 * z @ z)


def conditional_gaussian(full_mean, full_cov, target_index, observed):
    """Distribution of one coordinate given all the others.

    ``observed`` holds the values of the remaining coordinates in their
    original order. The observed block is solved with a Cholesky factor.
    """
    mu = np.asarray(full_mean, dtype=float)
    V = np.asarray(full_cov, dtype=float)
    obs = np.asarray(observed, dtype=float)
    t = int(target_index)
    rest = [i for i in range(mu.size) if i != t]
    if obs.size != len(rest):
        raise ValueError("observed must have one value per non-target coordinate")
    L = cholesky(V[np.ix_(rest, rest)])
    v_tr = V[t, rest]
    # V_rr^{-1} v_rt via two triangular solves
    u = _forward(L, v_tr)
    coef = _backward(L.T, u)
    mean = mu[t] + coef @ (obs - mu[rest])
    var = V[t, t] - v_tr @ coef
    return ConditionalGaussian(float(mean), float(max(var, 0.0)))


def _backward(U, b):
    out = np.empty_like(b)
    for i in range(U.shape[0] - 1, -1, -1):
        out[i] = (b[i] - U[i, i + 1:] @ out[i + 1:]) / U[i, i]
    return out
