"""One-factor structural equation model: likelihood, fitting and estimands.

The model is ``Y | A ~ N(nu + gamma * lambda * A, diag(theta) + lambda lambda^T)``
with a unit-variance latent factor. A binary or ordinal primary endpoint is
the thresholded version of a latent Gaussian ``Y1*`` whose residual variance
is fixed at 1 and whose first threshold is fixed at 0.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import _kernels as kern
from .data import TrialDataset, wald_result
from .dist import norm_cdf, norm_pdf

DEFAULT_GTOL = 1e-6
DEFAULT_MAXITER = 1000
DEFAULT_JITTER = 4
HESSIAN_STEP = 1e-4
_EMPTY = np.empty((0, 0))


class SemFitError(RuntimeError):
    """The optimizer did not reach a usable maximum.

    ``params`` and ``loglik`` hold the best point found, ``status`` is the
    kernel status code.
    """

    def __init__(self, message, params=None, loglik=float("nan"), status=None):
        super().__init__(message)
        self.params = params
        self.loglik = loglik
        self.status = status


@dataclass(frozen=True)
class SemParams:
    """Natural-scale SEM parameters.

    ``theta`` has one entry per endpoint; for a categorical primary the
    first entry is the fixed latent residual variance 1. ``thresholds`` holds
    the full cut-point list of a categorical primary (first cut 0) and is
    empty for a continuous one.
    """

    nu: np.ndarray
    lam: np.ndarray
    gamma: float
    theta: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        for name in ("nu", "lam", "theta", "thresholds"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))
        P = self.nu.size
        if self.lam.size != P or self.theta.size != P:
            raise ValueError("nu, lam and theta must all have length P")

    @property
    def P(self):
        return self.nu.size

    @property
    def K(self):
        return self.thresholds.size + 1 if self.thresholds.size else 0

    def flipped(self):
        """The observationally equivalent point with (gamma, lambda) negated."""
        return replace(self, lam=-self.lam, gamma=-self.gamma)


@dataclass(frozen=True)
class SemFit:
    """Maximum-likelihood fit of the one-factor model.

    ``param_cov`` is the inverse observed information of the free parameters
    on the natural scale, ordered as ``names``.
    """

    params: SemParams
    loglik: float
    param_cov: np.ndarray
    n_params: int
    converged: bool
    n_evals: int
    n: int
    names: tuple
    grad_max: float = 0.0
    flags: tuple = ()

    @property
    def K(self):
        return self.params.K

    def index(self, name):
        return self.names.index(name)

    def cov_of(self, names):
        idx = [self.index(nm) for nm in names]
        return self.param_cov[np.ix_(idx, idx)]


# --------------------------------------------------------------------------
# packing between SemParams and the kernel layout


def free_names(P, K):
    names = [f"nu{p + 1}" for p in range(P)] + [f"lambda{p + 1}" for p in range(P)]
    names.append("gamma")
    first = 1 if K else 0
    names += [f"theta{p + 1}" for p in range(first, P)]
    names += [f"cut{j}" for j in range(2, K)]
    return tuple(names)


def to_natural(p, K):
    parts = [p.nu, p.lam, [p.gamma], p.theta[1:] if K else p.theta]
    if K > 2:
        parts.append(p.thresholds[1:])
    return np.concatenate([np.asarray(v, dtype=float) for v in parts])


def from_natural(nat, P, K):
    nat = np.asarray(nat, dtype=float)
    nu = nat[:P]
    lam = nat[P:2 * P]
    gamma = nat[2 * P]
    nth = P - 1 if K else P
    th = nat[2 * P + 1:2 * P + 1 + nth]
    if K:
        theta = np.concatenate([[1.0], th])
        cuts = np.concatenate([[0.0], nat[2 * P + 1 + nth:]])
    else:
        theta = th
        cuts = np.empty(0)
    return SemParams(nu, lam, gamma, theta, cuts)


def _kernel_inputs(ds):
    """Contiguous arrays with Gaussian columns centred at their grand means.

    Centring keeps the raw cross-products used by the kernels well
    conditioned; only intercepts depend on it and are shifted back.
    """
    Y = np.array(ds.endpoints, dtype=float)
    shift = Y.mean(axis=0)
    if ds.K:
        shift[0] = 0.0
    Y -= shift
    return np.ascontiguousarray(Y), np.ascontiguousarray(ds.arm, dtype=np.int64), shift


# --------------------------------------------------------------------------
# model quantities


def implied_moments(p, arm):
    """Mean and covariance of the (latent-scale) endpoints in arm ``arm``."""
    mean = p.nu + p.gamma * p.lam * arm
    cov = np.diag(p.theta) + np.outer(p.lam, p.lam)
    return mean, cov


def _valid(p, K):
    th = p.theta[1:] if K else p.theta
    if not np.all(th > 0.0) or not np.all(np.isfinite(to_natural(p, K))):
        return False
    if K:
        if p.thresholds.size != K - 1 or p.thresholds[0] != 0.0:
            return False
        if np.any(np.diff(p.thresholds) <= 0.0):
            return False
    return True


def sem_loglik(p, ds):
    """Observed-data log-likelihood; ``-inf`` outside the parameter space."""
    K = ds.K
    if p.P != ds.P:
        raise ValueError("parameter dimension does not match the dataset")
    if not _valid(p, K):
        return -math.inf
    Y, arm, shift = _kernel_inputs(ds)
    nat = to_natural(p, K)
    nat[:ds.P] -= shift
    wts = np.ones(ds.n)
    cnt, sums, cross = kern.gaussian_stats(Y, arm, wts, K)
    cuts = np.ascontiguousarray(p.thresholds) if K else np.empty(0)
    g = np.empty(nat.size)
    return float(kern.loglik_nat(nat, cuts, Y, arm, wts, K, cnt, sums, cross, g))


def _jacobian_nat(x, P, K):
    """d(natural)/d(transformed) at transformed point ``x``."""
    m = x.size
    J = np.eye(m)
    o = 2 * P + 1
    nth = P - 1 if K else P
    for p in range(nth):
        J[o + p, o + p] = math.exp(x[o + p])
    o2 = o + nth
    for j in range(max(K - 2, 0)):
        for i in range(j + 1):
            J[o2 + j, o2 + i] = math.exp(x[o2 + i])
    return J


def fit_sem(ds, gtol=DEFAULT_GTOL, maxiter=DEFAULT_MAXITER, n_jitter=DEFAULT_JITTER,
            start=None, hessian_step=HESSIAN_STEP):
    """Maximum-likelihood fit by quasi-Newton search on a transformed scale.

    Parameters
    ----------
    ds : TrialDataset
    gtol : float
        Convergence tolerance on the largest gradient component of the mean
        negative log-likelihood (transformed scale).
    maxiter : int
        Iteration cap per start.
    n_jitter : int
        Perturbed restarts tried when the first start fails or ends on the
        boundary.
    start : SemParams, optional
        Warm start; the moment-based start is used otherwise.

    Returns
    -------
    SemFit
        Flagged ``"boundary"`` when a residual variance ends below 1e-4.

    Raises
    ------
    SemFitError
        If no start converges.
    """
    if not isinstance(ds, TrialDataset):
        raise TypeError("fit_sem expects a TrialDataset")
    P, K = ds.P, ds.K
    Y, arm, shift = _kernel_inputs(ds)
    nx = kern.n_free(P, K)
    if start is not None:
        nat0 = to_natural(start, K)
        nat0[:P] -= shift
        x0 = kern.pack(nat0, P, K)
        use_warm = True
    else:
        x0 = np.zeros(nx)
        use_warm = False
    x, ll, gmax, nfev, status = kern.fit_kernel(Y, arm, np.ones(ds.n), K, x0, use_warm,
                                                _EMPTY, gtol, maxiter, n_jitter)
    nat, _ = kern.unpack(x, P, K)
    nat[:P] += shift
    params = from_natural(nat, P, K)
    if status in (kern.FIT_FAILED, kern.FIT_NOT_CONVERGED):
        what = "failed" if status == kern.FIT_FAILED else "did not converge"
        raise SemFitError(f"SEM optimisation {what} (max |gradient| {gmax:.2e})",
                          params, float(ll), int(status))
    flags = ["boundary"] if status == kern.FIT_BOUNDARY else []
    H = kern.hessian_trans(x, Y, arm, K, hessian_step)
    info = -H
    try:
        np.linalg.cholesky(info)
        cov_x = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov_x = np.linalg.pinv(info)
        flags.append("singular-information")
    J = _jacobian_nat(x, P, K)
    cov = J @ cov_x @ J.T
    cov = 0.5 * (cov + cov.T)
    return SemFit(params, float(ll), cov, nx, True, int(nfev), ds.n, free_names(P, K),
                  float(gmax), tuple(flags))


def bic_sem(fit, n):
    return -2.0 * fit.loglik + fit.n_params * math.log(n)


# --------------------------------------------------------------------------
# estimands


def _require_categorical(fit, what):
    if not fit.K:
        raise ValueError(f"{what} is defined for a binary or ordinal primary")


def ate_sem_continuous(fit, alpha=0.05):
    """gamma * lambda1 with its delta-method standard error."""
    if fit.K:
        raise ValueError("continuous primary required; use ate_sem_binary")
    p = fit.params
    lam1, gam = p.lam[0], p.gamma
    j = np.array([lam1, gam])
    var = j @ fit.cov_of(["gamma", "lambda1"]) @ j
    return wald_result("SEM", "ATE", gam * lam1, math.sqrt(max(var, 0.0)), alpha,
                       flags=fit.flags)


def binary_ate_jacobian(gamma, nu1, lam1):
    """Gradient of the probability difference in (gamma, nu1, lambda1)."""
    s = math.sqrt(1.0 + lam1 * lam1)
    s3 = s ** 3
    hi = norm_pdf((nu1 + gamma * lam1) / s)
    lo = norm_pdf(nu1 / s)
    return (hi * np.array([lam1 / s, 1.0 / s, (gamma - nu1 * lam1) / s3])
            - lo * np.array([0.0, 1.0 / s, -nu1 * lam1 / s3]))


def ate_sem_binary(fit, alpha=0.05):
    """Success-probability difference implied by the fitted model."""
    if fit.K != 2:
        raise ValueError("binary primary required")
    p = fit.params
    nu1, lam1, gam = p.nu[0], p.lam[0], p.gamma
    s = math.sqrt(1.0 + lam1 * lam1)
    est = norm_cdf((nu1 + gam * lam1) / s) - norm_cdf(nu1 / s)
    j = binary_ate_jacobian(gam, nu1, lam1)
    var = j @ fit.cov_of(["gamma", "nu1", "lambda1"]) @ j
    return wald_result("SEM", "ATE", est, math.sqrt(max(var, 0.0)), alpha, flags=fit.flags)


def level_probabilities(p, arm):
    """Marginal level probabilities of a categorical primary in one arm."""
    K = p.K
    if not K:
        raise ValueError("categorical primary required")
    sd = math.sqrt(1.0 + p.lam[0] ** 2)
    m = p.nu[0] + p.gamma * p.lam[0] * arm
    upper = np.append(norm_cdf((p.thresholds - m) / sd), 1.0)
    return np.diff(np.concatenate([[0.0], upper]))


def _concordance_value(p):
    p1 = level_probabilities(p, 1)
    p0 = level_probabilities(p, 0)
    below = np.concatenate([[0.0], np.cumsum(p0)[:-1]])
    return float(p1 @ below + 0.5 * p1 @ p0)


def _mean_code_diff(p):
    codes = np.arange(p.K)
    return float(codes @ level_probabilities(p, 1) - codes @ level_probabilities(p, 0))


def _numeric_delta(fn, fit, rel_step=1e-6):
    """Delta-method variance of ``fn(params)`` with a central-difference gradient."""
    P, K = fit.params.P, fit.K
    nat = to_natural(fit.params, K)
    grad = np.zeros(nat.size)
    for i in range(nat.size):
        h = rel_step * max(1.0, abs(nat[i]))
        up = nat.copy()
        dn = nat.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(from_natural(up, P, K)) - fn(from_natural(dn, P, K))) / (2.0 * h)
    return float(grad @ fit.param_cov @ grad)


def ate_sem(fit, alpha=0.05):
    """Model-based ATE for any primary kind.

    For an ordinal primary the ATE is the difference in expected level codes
    ``0..K-1``, with a numerical-gradient delta-method standard error.
    """
    if fit.K == 0:
        return ate_sem_continuous(fit, alpha)
    if fit.K == 2:
        return ate_sem_binary(fit, alpha)
    est = _mean_code_diff(fit.params)
    var = _numeric_delta(_mean_code_diff, fit)
    return wald_result("SEM", "ATE", est, math.sqrt(max(var, 0.0)), alpha, flags=fit.flags)


def probit_coefficient(fit, alpha=0.05):
    """Latent mean shift over the latent within-arm standard deviation."""
    _require_categorical(fit, "the probit coefficient")
    p = fit.params
    lam1, gam = p.lam[0], p.gamma
    s = math.sqrt(1.0 + lam1 * lam1)
    j = np.array([lam1 / s, gam / s ** 3])
    var = j @ fit.cov_of(["gamma", "lambda1"]) @ j
    return wald_result("SEM", "probit-coefficient", gam * lam1 / s, math.sqrt(max(var, 0.0)),
                       alpha, flags=fit.flags)


def concordance(fit, alpha=0.05):
    """P(Y1 treated > Y1 control) plus half the tie probability."""
    _require_categorical(fit, "concordance")
    est = _concordance_value(fit.params)
    var = _numeric_delta(_concordance_value, fit)
    return wald_result("SEM", "concordance", est, math.sqrt(max(var, 0.0)), alpha,
                       flags=fit.flags)
