"""Model averaging of the SEM and saturated estimates.

Two data-driven weights on the SEM estimate are provided: a BIC weight
(approximate posterior probability of the SEM) and a Super Learner weight
chosen by V-fold cross-validated squared prediction error of the primary.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from .sem import SemFitError, fit_sem, level_probabilities
from .streams import FOLD_STREAM, rng_for

DEFAULT_FOLDS = 10
DEFAULT_GRID_STEP = 0.01


@dataclass(frozen=True)
class WeightedEstimate:
    omega: float
    tau_sem: float
    tau_sat: float
    tau_ma: float


@dataclass(frozen=True)
class FoldAssignment:
    """Arm-stratified fold labels ``0..V-1``, one per subject."""

    V: int
    folds: np.ndarray

    def training(self, v):
        return self.folds != v


@dataclass(frozen=True)
class SuperLearnerResult:
    omega: float
    degraded: bool
    n_degraded: int
    assignment: FoldAssignment


def omega_bic(bic_sem, bic_sat):
    """Weight on the SEM, ``1 / (1 + exp((bic_sem - bic_sat) / 2))``."""
    if not (math.isfinite(bic_sem) and math.isfinite(bic_sat)):
        raise ValueError("BIC values must be finite")
    return float(expit(-0.5 * (bic_sem - bic_sat)))


def combine(omega, tau_sem, tau_sat):
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    return WeightedEstimate(omega, tau_sem, tau_sat, omega * tau_sem + (1.0 - omega) * tau_sat)


def weight_grid(step):
    if not 0.0 < step <= 1.0:
        raise ValueError("grid_step must lie in (0, 1]")
    k = int(math.floor(1.0 / step + 1e-9))
    grid = np.arange(k + 1) * step
    if grid[-1] < 1.0 - 1e-12:
        grid = np.append(grid, 1.0)
    return np.minimum(grid, 1.0)


def sl_weight(y, pred_sem, pred_sat, grid_step=DEFAULT_GRID_STEP):
    """Grid weight minimising the squared error of the combined predictions.

    Ties go to the smallest weight.
    """
    y = np.asarray(y, dtype=float)
    r = y - np.asarray(pred_sat, dtype=float)
    d = np.asarray(pred_sem, dtype=float) - np.asarray(pred_sat, dtype=float)
    a0, a1, a2 = r @ r, r @ d, d @ d
    grid = weight_grid(grid_step)
    loss = a0 - 2.0 * grid * a1 + grid * grid * a2
    return float(grid[int(np.argmin(loss))])


def make_folds(arm, V, seed, *keys):
    """Random fold labels with sizes balanced within each arm.

    Drawn from the stream ``(seed, *keys, FOLD_STREAM)``.
    Raises ``ValueError`` unless every fold gets at least 2 subjects per arm.
    """
    arm = np.asarray(arm)
    if V < 2:
        raise ValueError("V must be at least 2")
    smallest = min(int(np.sum(arm == 0)), int(np.sum(arm == 1)))
    if V > smallest // 2:
        raise ValueError(f"V={V} leaves fewer than 2 subjects per arm in some fold "
                         f"(smallest arm has {smallest})")
    rng = rng_for(seed, *keys, FOLD_STREAM)
    folds = np.empty(arm.size, dtype=np.int64)
    for a in (0, 1):
        members = np.flatnonzero(arm == a)
        folds[rng.permutation(members)] = np.arange(members.size) % V
    return FoldAssignment(V, folds)


def sem_arm_means(params):
    """E(Y1 | A = a), a = 0, 1: probabilities or expected level codes if categorical."""
    if params.K:
        codes = np.arange(params.K)
        return np.array([codes @ level_probabilities(params, a) for a in (0, 1)])
    return np.array([params.nu[0], params.nu[0] + params.gamma * params.lam[0]])


def omega_super_learner(ds, V=DEFAULT_FOLDS, grid_step=DEFAULT_GRID_STEP, seed=0,
                        assignment=None, **fit_options):
    """Cross-validated weight on the SEM for predicting the primary endpoint.

    Each fold's SEM and saturated models are fitted on the training
    complement and predict held-out primaries from arm alone. A training fit
    that fails is replaced by the saturated predictions for that fold and the
    result is marked degraded.
    """
    if assignment is None:
        assignment = make_folds(ds.arm, V, seed)
    y = ds.endpoints[:, 0]
    pred_sem = np.empty(ds.n)
    pred_sat = np.empty(ds.n)
    n_bad = 0
    for v in range(assignment.V):
        train = ds.subset(assignment.training(v))
        test = ~assignment.training(v)
        ytr = train.endpoints[:, 0]
        msat = np.array([ytr[train.arm == a].mean() for a in (0, 1)])
        try:
            msem = sem_arm_means(fit_sem(train, **fit_options).params)
        except SemFitError:
            msem = msat
            n_bad += 1
        pred_sat[test] = msat[ds.arm[test]]
        pred_sem[test] = msem[ds.arm[test]]
    omega = sl_weight(y, pred_sem, pred_sat, grid_step)
    return SuperLearnerResult(omega, n_bad > 0, n_bad, assignment)
