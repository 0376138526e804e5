"""One-factor SEM treatment-effect estimation with model averaging.

The primary-endpoint treatment effect of a two-arm trial is estimated four
ways: the saturated difference in means, a one-factor structural equation
model that borrows strength from secondary endpoints, and two convex
combinations of the two (BIC and Super Learner weights).
"""

__version__ = "0.1.0"

from ._backend import NUMBA_ENABLED, backend_name, set_threads
from .analysis import AnalysisReport, analyze
from .averaging import (FoldAssignment, SuperLearnerResult, combine, make_folds,
                        omega_bic, omega_super_learner, sl_weight)
from .bootstrap import (BootstrapError, BootstrapResult, averaging_run, bootstrap,
                        effective_sample_size, resample_indices)
from .data import (DataValidationError, EndpointSpec, EstimateResult, TrialDataset,
                   load_csv, write_csv)
from .dist import (SingularMatrixError, conditional_gaussian, mvn_logpdf, norm_cdf,
                   norm_pdf, norm_quantile)
from .saturated import (SingularDataError, ate_saturated, bic_saturated, fit_saturated,
                        saturated_estimate)
from .sem import (SemFit, SemFitError, SemParams, ate_sem, bic_sem, concordance, fit_sem,
                  probit_coefficient, sem_loglik)
from .simulate import (MonteCarloSummary, ScenarioError, SimScenario, gen_sim_a, gen_sim_b,
                       gen_sim_c, run_monte_carlo)

__all__ = [
    "NUMBA_ENABLED", "backend_name", "set_threads",
    "AnalysisReport", "analyze",
    "FoldAssignment", "SuperLearnerResult", "combine", "make_folds", "omega_bic",
    "omega_super_learner", "sl_weight",
    "BootstrapError", "BootstrapResult", "averaging_run", "bootstrap",
    "effective_sample_size", "resample_indices",
    "DataValidationError", "EndpointSpec", "EstimateResult", "TrialDataset", "load_csv",
    "write_csv",
    "SingularMatrixError", "conditional_gaussian", "mvn_logpdf", "norm_cdf", "norm_pdf",
    "norm_quantile",
    "SingularDataError", "ate_saturated", "bic_saturated", "fit_saturated",
    "saturated_estimate",
    "SemFit", "SemFitError", "SemParams", "ate_sem", "bic_sem", "concordance", "fit_sem",
    "probit_coefficient", "sem_loglik",
    "MonteCarloSummary", "ScenarioError", "SimScenario", "gen_sim_a", "gen_sim_b",
    "gen_sim_c", "run_monte_carlo",
]
