"""Arm-stratified nonparametric bootstrap and percentile intervals."""

from dataclasses import dataclass
import math

import numpy as np

from . import _kernels as kern
from .averaging import DEFAULT_FOLDS, DEFAULT_GRID_STEP, make_folds
from .data import METHODS
from .sem import DEFAULT_GTOL, DEFAULT_JITTER, DEFAULT_MAXITER, SemFitError, _kernel_inputs
from .streams import BOOT_STREAM, rng_for

MIN_B = 100
FAILURE_LIMIT = 0.05

_METHOD_COLUMN = {
    "Saturated": kern.REC_TAU_SAT,
    "SEM": kern.REC_TAU_SEM,
    "BIC-MA": kern.REC_TAU_BIC,
    "SL-MA": kern.REC_TAU_SL,
}


class BootstrapError(RuntimeError):
    """The estimator failed on the full data."""


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap distribution summary.

    ``estimates`` holds the successful replicates only; ``se`` is their
    standard deviation (ddof 1) and the interval their type-7 ``alpha/2``
    and ``1 - alpha/2`` quantiles.
    """

    estimates: np.ndarray
    point: float
    se: float
    ci_low: float
    ci_high: float
    alpha: float
    n_failed: int
    B: int

    @property
    def unreliable(self):
        return self.n_failed > FAILURE_LIMIT * self.B

    @property
    def wald(self):
        """Point estimate over bootstrap SE."""
        if self.se > 0.0:
            return self.point / self.se
        return math.copysign(math.inf, self.point) if self.point != 0.0 else math.nan

    def to_dict(self):
        return {
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "alpha": self.alpha,
            "B": self.B,
            "n_failed": self.n_failed,
            "unreliable": self.unreliable,
            "wald": self.wald,
        }


def _check(B, alpha):
    if int(B) != B or B < MIN_B:
        raise ValueError(f"B must be an integer >= {MIN_B}, got {B}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def resample_indices(arm, B, seed, *keys):
    """``B x n`` row indices; resample ``b`` draws each arm's rows with replacement.

    Resample ``b`` uses its own stream ``(seed, *keys, BOOT_STREAM, b)``.
    """
    arm = np.asarray(arm)
    members = [np.flatnonzero(arm == a) for a in (0, 1)]
    out = np.empty((B, arm.size), dtype=np.int64)
    for b in range(B):
        rng = rng_for(seed, *keys, BOOT_STREAM, b)
        out[b] = np.concatenate([m[rng.integers(0, m.size, m.size)] for m in members])
    return out


def summarize(point, replicates, alpha):
    """BootstrapResult from replicate estimates; NaN marks a failed replicate."""
    reps = np.asarray(replicates, dtype=float)
    ok = reps[np.isfinite(reps)]
    n_failed = reps.size - ok.size
    if ok.size == 0:
        nan = math.nan
        return BootstrapResult(ok, float(point), nan, nan, nan, alpha, n_failed, reps.size)
    lo, hi = np.quantile(ok, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    se = float(np.std(ok, ddof=1)) if ok.size > 1 else 0.0
    return BootstrapResult(ok, float(point), se, float(lo), float(hi), alpha, n_failed,
                           reps.size)


@dataclass(frozen=True)
class AveragingRun:
    """Full-data and bootstrap records of all four estimators on shared resamples.

    ``full`` and the rows of ``records`` follow the kernel record layout
    (``REC_*`` columns of :mod:`semtrial._kernels`).
    """

    full: np.ndarray
    records: np.ndarray
    alpha: float
    V: int

    def point(self, method):
        return float(self.full[_METHOD_COLUMN[method]])

    def result(self, method):
        col = _METHOD_COLUMN[method]
        return summarize(self.full[col], self.records[:, col], self.alpha)

    @property
    def omega_bic(self):
        return float(self.full[kern.REC_OMEGA_BIC])

    @property
    def omega_sl(self):
        return float(self.full[kern.REC_OMEGA_SL])

    @property
    def sl_degraded(self):
        return int(self.full[kern.REC_SL_DEGRADED])


def _full_record(ds, V, grid_step, seed, keys, gtol, maxiter, n_jitter):
    Y, arm, _ = _kernel_inputs(ds)
    folds = make_folds(ds.arm, V, seed, *keys).folds
    rec = np.empty(kern.REC_WIDTH)
    x = np.empty(kern.n_free(ds.P, ds.K))
    kern.ma_replicate(Y, arm, ds.K, folds, V, grid_step, np.zeros(x.size), False,
                      np.empty((0, 0)), gtol, maxiter, n_jitter, rec, x)
    if not rec[kern.REC_STATUS] <= kern.FIT_BOUNDARY:
        raise SemFitError("SEM fit failed on the full data", status=int(rec[kern.REC_STATUS]))
    return rec, x, Y, arm


def averaging_point(ds, V=DEFAULT_FOLDS, grid_step=DEFAULT_GRID_STEP, seed=0, keys=(),
                    gtol=DEFAULT_GTOL, maxiter=DEFAULT_MAXITER, n_jitter=DEFAULT_JITTER):
    """Full-data record of the compiled pipeline, without resampling."""
    return _full_record(ds, V, grid_step, seed, keys, gtol, maxiter, n_jitter)[0]


def averaging_run(ds, B=1000, alpha=0.05, seed=0, V=DEFAULT_FOLDS,
                  grid_step=DEFAULT_GRID_STEP, keys=(), gtol=DEFAULT_GTOL,
                  maxiter=DEFAULT_MAXITER, n_jitter=DEFAULT_JITTER):
    """Run the compiled model-averaging pipeline on the data and ``B`` resamples.

    Full-data Super Learner folds come from the stream ``(seed, *keys,
    FOLD_STREAM)``; inside a resample, folds are assigned by rank within arm.
    Resamples are warm-started from the full-data fit.

    Raises
    ------
    SemFitError
        If the SEM cannot be fitted to the full data.
    """
    _check(B, alpha)
    full, x, Y, arm = _full_record(ds, V, grid_step, seed, keys, gtol, maxiter, n_jitter)
    H = kern.warm_inverse_hessian(Y, arm, ds.K, x, 1e-4)
    idx = resample_indices(ds.arm, B, seed, *keys)
    records = np.empty((B, kern.REC_WIDTH))
    kern.bootstrap_ma(Y, arm, ds.K, idx, V, grid_step, x, H, gtol, maxiter, n_jitter,
                      records)
    return AveragingRun(full, records, alpha, V)


def bootstrap(ds, estimator, B=1000, alpha=0.05, seed=0, **options):
    """Bootstrap distribution of one estimator.

    Parameters
    ----------
    ds : TrialDataset
    estimator : str or callable
        One of ``Saturated``, ``SEM``, ``BIC-MA``, ``SL-MA`` (ATE estimators,
        run through the compiled pipeline; ``options`` go to
        :func:`averaging_run`), or a function ``ds -> float``.
    B : int
        Number of resamples, at least 100.
    alpha : float
        The interval has nominal coverage ``1 - alpha``.
    seed : int

    Returns
    -------
    BootstrapResult
    """
    _check(B, alpha)
    if isinstance(estimator, str):
        if estimator not in METHODS:
            raise ValueError(f"unknown estimator {estimator!r}; choose from {METHODS}")
        try:
            run = averaging_run(ds, B, alpha, seed, **options)
        except SemFitError as exc:
            raise BootstrapError(str(exc)) from exc
        return run.result(estimator)
    try:
        point = float(estimator(ds))
    except (SemFitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise BootstrapError(f"estimator failed on the full data: {exc}") from exc
    idx = resample_indices(ds.arm, B, seed)
    reps = np.empty(B)
    for b in range(B):
        try:
            reps[b] = estimator(ds.subset(idx[b]))
        except (SemFitError, ValueError, ArithmeticError, np.linalg.LinAlgError):
            reps[b] = math.nan
    return summarize(point, reps, alpha)


def effective_sample_size(var_candidate, var_saturated, n):
    """Sample size at which the saturated estimator would match the candidate's precision."""
    if not (var_candidate > 0.0 and var_saturated > 0.0):
        raise ValueError("variances must be positive")
    return n * var_saturated / var_candidate
