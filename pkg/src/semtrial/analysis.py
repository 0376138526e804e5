"""One-dataset analysis with all four estimators."""

from dataclasses import dataclass, field
import math

from . import _kernels as kern
from .averaging import DEFAULT_FOLDS, DEFAULT_GRID_STEP
from .bootstrap import averaging_point, averaging_run, effective_sample_size
from .data import METHODS, EstimateResult
from .saturated import saturated_estimate
from .sem import ate_sem, concordance, fit_sem, probit_coefficient


@dataclass(frozen=True)
class AnalysisReport:
    """Estimates for one dataset; ``ess`` maps method to effective sample size."""

    results: tuple
    ess: dict
    n: int
    seed: int
    sem_fit: object = None
    bootstrap: dict = field(default_factory=dict)

    def get(self, method, estimand="ATE"):
        for r in self.results:
            if r.method == method and r.estimand == estimand:
                return r
        raise KeyError((method, estimand))


def analyze(ds, methods=METHODS, B=1000, V=DEFAULT_FOLDS, grid_step=DEFAULT_GRID_STEP,
            alpha=0.05, seed=0, keys=(), extra_estimands=True):
    """Estimate the primary-endpoint ATE with each requested method.

    Saturated and SEM results use analytic and delta-method standard errors.
    Model-averaged results use the bootstrap: SE from the replicate standard
    deviation and a percentile interval. With ``B == 0`` the model-averaged
    rows carry point estimates and weights only.

    For a categorical primary and ``extra_estimands``, the SEM also reports
    the probit coefficient and the concordance probability.

    Raises
    ------
    SemFitError
        If a method needing the SEM cannot fit it on the full data.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown estimators: {sorted(unknown)}")
    results = []
    boot = {}
    fit = None
    if "Saturated" in methods:
        results.append(saturated_estimate(ds, alpha))
    if "SEM" in methods:
        fit = fit_sem(ds)
        results.append(ate_sem(fit, alpha))
        if ds.K and extra_estimands:
            results.append(probit_coefficient(fit, alpha))
            results.append(concordance(fit, alpha))
    averaged = [m for m in ("BIC-MA", "SL-MA") if m in methods]
    if averaged:
        if B:
            run = averaging_run(ds, B, alpha, seed, V, grid_step, keys)
            full = run.full
        else:
            run = None
            full = averaging_point(ds, V, grid_step, seed, keys)
        flags = []
        if full[kern.REC_STATUS] == kern.FIT_BOUNDARY:
            flags.append("boundary")
        for m in averaged:
            col, wcol = ((kern.REC_TAU_BIC, kern.REC_OMEGA_BIC) if m == "BIC-MA"
                         else (kern.REC_TAU_SL, kern.REC_OMEGA_SL))
            mflags = list(flags)
            if m == "SL-MA" and full[kern.REC_SL_DEGRADED] > 0:
                mflags.append("sl-degraded")
            if run is None:
                nan = math.nan
                res = EstimateResult(m, "ATE", float(full[col]), nan, nan, nan,
                                     float(full[wcol]), tuple(mflags))
            else:
                br = run.result(m)
                boot[m] = br
                if br.unreliable:
                    mflags.append("unreliable")
                res = EstimateResult(m, "ATE", br.point, br.se, br.ci_low, br.ci_high,
                                     float(full[wcol]), tuple(mflags))
            results.append(res)
    results.sort(key=lambda r: (METHODS.index(r.method), r.estimand != "ATE"))
    ess = {}
    sat = [r for r in results if r.method == "Saturated"]
    if sat and sat[0].std_error > 0.0:
        for r in results:
            if r.estimand == "ATE" and r.std_error > 0.0:
                ess[r.method] = effective_sample_size(r.std_error ** 2, sat[0].std_error ** 2,
                                                      ds.n)
    return AnalysisReport(tuple(results), ess, ds.n, seed, fit, boot)
