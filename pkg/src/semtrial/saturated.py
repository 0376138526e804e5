"""Saturated (unstructured) model: arm-wise means with a common covariance."""

from dataclasses import dataclass
import math
import warnings

import numpy as np

from .data import arm_split, exact_crossprod, exact_mean, wald_result
from .dist import LOG2PI, SingularMatrixError, cholesky


class SingularDataError(ValueError):
    """The pooled covariance of the data is singular."""


@dataclass(frozen=True)
class SaturatedFit:
    """Gaussian MLE with arm-specific means and a pooled covariance."""

    alpha: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    loglik: float
    n_params: int


@dataclass(frozen=True)
class MixedSaturatedFit:
    """Saturated model for a categorical primary.

    Level probabilities per arm times a Gaussian regression of the secondaries
    on arm and the observed primary level. ``level_probs[a, k]`` is the
    arm-``a`` frequency of level ``k``; ``coef`` rows are intercept, arm, then
    one dummy per observed non-reference level.
    """

    level_probs: np.ndarray
    coef: np.ndarray
    sigma: np.ndarray
    loglik: float
    n_params: int


def _logdet(S):
    try:
        L = cholesky(S)
    except SingularMatrixError as exc:
        raise SingularDataError(f"pooled covariance is singular (pivot {exc.pivot})") from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def fit_saturated(ds):
    """Gaussian saturated fit of all endpoint columns on the observed scale."""
    Y = ds.endpoints
    n, P = Y.shape
    m0 = exact_mean(Y[ds.arm == 0])
    m1 = exact_mean(Y[ds.arm == 1])
    R = Y - np.where(ds.arm[:, None] == 1, m1, m0)
    S = exact_crossprod(R) / n
    ll = -0.5 * n * (P * LOG2PI + _logdet(S) + P)
    return SaturatedFit(m0, m1 - m0, S, float(ll), 2 * P + P * (P + 1) // 2)


def fit_saturated_mixed(ds):
    """Saturated fit for a binary or ordinal primary."""
    K = ds.K
    if not K:
        raise ValueError("categorical primary required; use fit_saturated")
    Y, arm = ds.endpoints, ds.arm
    n, P = Y.shape
    Q = P - 1
    codes = Y[:, 0].astype(int)
    counts = np.zeros((2, K))
    np.add.at(counts, (arm, codes), 1.0)
    probs = counts / counts.sum(axis=1, keepdims=True)
    nz = counts > 0
    ll = float(np.sum(counts[nz] * np.log(probs[nz])))
    present = [k for k in range(1, K) if counts[:, k].sum() > 0]
    X = np.column_stack([np.ones(n), arm] + [(codes == k).astype(float) for k in present])
    coef, *_ = np.linalg.lstsq(X, Y[:, 1:], rcond=None)
    R = Y[:, 1:] - X @ coef
    S = R.T @ R / n
    ll += -0.5 * n * (Q * LOG2PI + _logdet(S) + Q)
    k = 2 * (K - 1) + Q * (K + 1) + Q * (Q + 1) // 2
    return MixedSaturatedFit(probs, coef, S, ll, k)


def fit_comparable(ds):
    """The saturated fit whose likelihood is comparable with the SEM's."""
    return fit_saturated_mixed(ds) if ds.K else fit_saturated(ds)


def bic_saturated(fit, n):
    return -2.0 * fit.loglik + fit.n_params * math.log(n)


def ate_saturated(fit, ds, alpha=0.05):
    """Difference in arm means of the primary with the unpooled two-sample SE."""
    s = arm_split(ds)
    se = math.sqrt(s.cov1[0, 0] / s.n1 + s.cov0[0, 0] / s.n0)
    return wald_result("Saturated", "ATE", fit.beta[0], se, alpha)


def ate_saturated_binary(ds, alpha=0.05):
    """Difference in success proportions with the plug-in binomial SE.

    An arm whose outcomes are all equal gives a zero variance term; the
    result is then flagged ``"degenerate-arm"`` and a warning is issued.
    """
    if ds.K != 2:
        raise ValueError("binary primary required")
    y = ds.endpoints[:, 0]
    p1 = math.fsum(y[ds.arm == 1]) / np.sum(ds.arm == 1)
    p0 = math.fsum(y[ds.arm == 0]) / np.sum(ds.arm == 0)
    n1 = int(np.sum(ds.arm == 1))
    n0 = ds.n - n1
    se = math.sqrt(p1 * (1.0 - p1) / n1 + p0 * (1.0 - p0) / n0)
    flags = ()
    if p1 in (0.0, 1.0) or p0 in (0.0, 1.0):
        flags = ("degenerate-arm",)
        warnings.warn("an arm has all-equal binary outcomes; its variance term is 0",
                      RuntimeWarning, stacklevel=2)
    return wald_result("Saturated", "ATE", p1 - p0, se, alpha, flags=flags)


def saturated_estimate(ds, alpha=0.05):
    """Saturated ATE for any primary kind (level codes for an ordinal one)."""
    if ds.K == 2:
        return ate_saturated_binary(ds, alpha)
    return ate_saturated(fit_saturated(ds), ds, alpha)
