"""Scenario generators and the Monte Carlo evaluation loop."""

import csv
from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .analysis import analyze
from .averaging import DEFAULT_FOLDS, DEFAULT_GRID_STEP
from .sem import SemFitError
from .data import METHODS, EndpointSpec, TrialDataset, z_critical
from .dist import norm_quantile
from .streams import DATA_STREAM, rng_for

LABELS = ("A", "B1", "B2", "C")
BETA_ALT = np.array([0.25, 0.35, 0.30])
SECONDARY_SHIFT = np.array([0.35, 0.30])
P0_C, P1_C = 0.15, 0.25
A_GRID = tuple(round(0.20 + 0.05 * k, 2) for k in range(11))
B_GRID = tuple(0.25 * k for k in range(9))
C_GRID = tuple(0.25 * k for k in range(6))


class ScenarioError(ValueError):
    """The scenario parameters do not define a valid data-generating model."""


def sim_a_loadings(c12):
    """(gamma, lambda) of the Simulation A model with Cov(Y1, Y2 | A) = c12."""
    if not c12 > 0.0:
        raise ScenarioError(f"c12 must be positive, got {c12}")
    gamma = math.sqrt(BETA_ALT[0] * BETA_ALT[1] / c12)
    lam = BETA_ALT / gamma
    if np.any(lam >= 1.0):
        raise ScenarioError(f"c12={c12} implies a loading >= 1 (residual variance <= 0)")
    return gamma, lam


def _unit_cov(c12, c13, c23):
    return np.array([[1.0, c12, c13], [c12, 1.0, c23], [c13, c23, 1.0]])


@dataclass(frozen=True)
class SimScenario:
    """A data-generating model for one simulation cell.

    ``shape`` is Cov(Y1, Y2 | A) for scenario A and the correlation scale
    ``s`` for B1, B2 and C. ``hypothesis`` is ``alternative`` or ``null``;
    the B1 null leaves only the primary unaffected and B2 is a global null.
    """

    label: str
    hypothesis: str
    shape: float
    n: int = 250

    def __post_init__(self):
        if self.label not in LABELS:
            raise ScenarioError(f"unknown scenario {self.label!r}")
        if self.hypothesis not in ("alternative", "null"):
            raise ScenarioError("hypothesis must be 'alternative' or 'null'")
        if self.label == "B2" and self.hypothesis != "null":
            raise ScenarioError("scenario B2 is a global null")
        if self.n < 4:
            raise ScenarioError("n must be at least 4")
        object.__setattr__(self, "shape", float(self.shape))
        self.covariance()

    @property
    def name(self):
        return f"{self.label}-{self.hypothesis}-{self.shape:g}-n{self.n}"

    @property
    def arms(self):
        n0 = self.n // 2
        return n0, self.n - n0

    def covariance(self):
        """Within-arm covariance (of the latent primary for scenario C)."""
        s = self.shape
        if self.label == "A":
            _, lam = sim_a_loadings(s)
            cov = np.diag(1.0 - lam ** 2) + np.outer(lam, lam)
        elif self.label == "B1":
            cov = _unit_cov(0.35 * s, 0.30 * s, 0.42)
        elif self.label == "B2":
            cov = _unit_cov(0.35 * s, 0.30, 0.42)
        else:
            cov = _unit_cov(0.51 * s, 0.43 * s, 0.42)
        if np.linalg.eigvalsh(cov)[0] <= 0.0:
            raise ScenarioError(f"scenario {self.label} covariance is not positive definite "
                                f"at s={s:g}")
        return cov

    def means(self):
        """Arm-0 and arm-1 mean vectors (latent scale for the primary of C)."""
        alt = self.hypothesis == "alternative"
        if self.label == "C":
            nu1 = norm_quantile(P0_C)
            shift = norm_quantile(P1_C) - nu1 if alt else 0.0
            m0 = np.array([nu1, 0.0, 0.0])
            return m0, m0 + np.concatenate([[shift], SECONDARY_SHIFT])
        if self.label == "B2":
            delta = np.zeros(3)
        elif alt:
            delta = BETA_ALT.copy()
        elif self.label == "A":
            delta = np.zeros(3)
        else:
            delta = np.array([0.0, 0.35, 0.30])
        return np.zeros(3), delta

    def true_ate(self):
        if self.label == "C":
            return P1_C - P0_C if self.hypothesis == "alternative" else 0.0
        m0, m1 = self.means()
        return float(m1[0] - m0[0])

    def specs(self):
        first = EndpointSpec("Y1", "binary") if self.label == "C" else EndpointSpec("Y1")
        return (first, EndpointSpec("Y2"), EndpointSpec("Y3"))

    def generate(self, rng):
        n0, n1 = self.arms
        arm = np.repeat([0, 1], [n0, n1])
        L = np.linalg.cholesky(self.covariance())
        m0, m1 = self.means()
        Y = rng.standard_normal((self.n, 3)) @ L.T + np.where(arm[:, None] == 1, m1, m0)
        if self.label == "C":
            Y[:, 0] = (Y[:, 0] > 0.0).astype(float)
        return TrialDataset(arm, Y, self.specs())


def gen_sim_a(c12, hypothesis, n, rng):
    return SimScenario("A", hypothesis, c12, n).generate(rng)


_B_VARIANTS = {
    "B1-alt": ("B1", "alternative"),
    "B1-null-primary": ("B1", "null"),
    "B2-global-null": ("B2", "null"),
}


def gen_sim_b(variant, s, n, rng):
    if variant not in _B_VARIANTS:
        raise ScenarioError(f"unknown variant {variant!r}; choose from {sorted(_B_VARIANTS)}")
    label, hyp = _B_VARIANTS[variant]
    return SimScenario(label, hyp, s, n).generate(rng)


def gen_sim_c(s, hypothesis, n, rng):
    return SimScenario("C", hypothesis, s, n).generate(rng)


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class EstimatorSummary:
    method: str
    bias: float
    se: float
    rmse: float
    coverage: float
    rejection: float
    mean_omega: float
    n_failed: int
    n_used: int


@dataclass(frozen=True)
class MonteCarloSummary:
    """Operating characteristics of each estimator over the replicates of one cell.

    ``se`` is the Monte Carlo standard deviation with divisor ``reps`` so that
    ``rmse**2 == bias**2 + se**2``. ``endpoint_rejection[p]`` is the rejection
    rate of the two-sample z-test on endpoint ``p``. ``records`` maps each
    method to a ``reps x 5`` array of estimate, SE, CI bounds and weight.
    """

    scenario: SimScenario
    reps: int
    seed: int
    cell: int
    true_tau: float
    rows: tuple
    endpoint_rejection: tuple
    bootstrap_B: int
    records: dict = field(default_factory=dict, repr=False, compare=False)

    def row(self, method):
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def endpoint_z_tests(ds, alpha=0.05):
    """Two-sample z-test decisions (unpooled SE) for every endpoint column."""
    z = z_critical(alpha)
    out = []
    for p in range(ds.P):
        y0 = ds.endpoints[ds.arm == 0, p]
        y1 = ds.endpoints[ds.arm == 1, p]
        se = math.sqrt(y0.var(ddof=1) / y0.size + y1.var(ddof=1) / y1.size)
        d = y1.mean() - y0.mean()
        out.append(se > 0.0 and abs(d / se) > z)
    return out


def _summarize(method, rec, tau, z):
    est, se, lo, hi, omega = rec.T
    ok = np.isfinite(est)
    used = int(ok.sum())
    if used == 0:
        nan = math.nan
        return EstimatorSummary(method, nan, nan, nan, nan, nan, nan, len(est), 0)
    e = est[ok]
    err = e - tau
    bias = math.fsum(err) / used
    sd = math.sqrt(math.fsum((e - math.fsum(e) / used) ** 2) / used)
    rmse = math.sqrt(math.fsum(err ** 2) / used)
    s, l, h = se[ok], lo[ok], hi[ok]
    if np.all(np.isfinite(l)):
        coverage = float(np.mean((l <= tau) & (tau <= h)))
    else:
        coverage = math.nan
    if np.all(np.isfinite(s)):
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = np.where(s > 0.0, np.abs(e) / s, np.where(e != 0.0, np.inf, 0.0))
        rejection = float(np.mean(stat > z))
    else:
        rejection = math.nan
    w = omega[ok]
    mean_omega = math.fsum(w) / used if np.all(np.isfinite(w)) else math.nan
    return EstimatorSummary(method, bias, sd, rmse, coverage, rejection, mean_omega,
                            len(est) - used, used)


def run_monte_carlo(scenario, reps, estimators=METHODS, bootstrap_B=500, seed=0, cell=0,
                    V=DEFAULT_FOLDS, grid_step=DEFAULT_GRID_STEP, alpha=0.05, progress=None):
    """Simulate ``reps`` datasets from ``scenario`` and evaluate each estimator.

    Replicate ``r`` draws its data from the stream ``(seed, cell, r,
    DATA_STREAM)`` and its bootstrap and folds from streams keyed by
    ``(seed, cell, r)``, so any subset of replicates can be rerun alone.
    Model-averaged estimators are tested and covered with bootstrap SEs and
    percentile intervals; with ``bootstrap_B == 0`` they report bias, SE and
    RMSE only. A replicate whose SEM fit fails counts as a failure for every
    SEM-based estimator.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    estimators = tuple(m for m in METHODS if m in estimators)
    tau = scenario.true_ate()
    recs = {m: np.full((reps, 5), math.nan) for m in estimators}
    ep = np.zeros((reps, 3), dtype=bool)
    for r in range(reps):
        ds = scenario.generate(rng_for(seed, cell, r, DATA_STREAM))
        ep[r] = endpoint_z_tests(ds, alpha)
        try:
            rep = analyze(ds, estimators, bootstrap_B, V, grid_step, alpha, seed, (cell, r),
                          extra_estimands=False)
        except SemFitError:
            rep = analyze(ds, ("Saturated",), 0, V, grid_step, alpha, seed, (cell, r))
        for res in rep.results:
            if res.method in recs and res.estimand == "ATE":
                w = math.nan if res.weight_on_sem is None else res.weight_on_sem
                recs[res.method][r] = (res.estimate, res.std_error, res.ci_low, res.ci_high, w)
        if progress is not None:
            progress(r + 1, reps)
    z = z_critical(alpha)
    rows = tuple(_summarize(m, recs[m], tau, z) for m in estimators)
    return MonteCarloSummary(scenario, reps, seed, cell, tau, rows,
                             tuple(float(v) for v in ep.mean(axis=0)), bootstrap_B, recs)


# --------------------------------------------------------------------------
# sweep configuration and CSV output


@dataclass(frozen=True)
class SweepConfig:
    scenario: str
    hypotheses: tuple
    grid: tuple
    n: int = 250
    reps: int = 1000
    estimators: tuple = METHODS
    seed: int = 0
    bootstrap_B: int = 500
    folds: int = DEFAULT_FOLDS
    grid_step: float = DEFAULT_GRID_STEP
    alpha: float = 0.05

    def cells(self):
        """(cell id, scenario or ScenarioError) in grid-major order."""
        out = []
        k = 0
        for h in self.hypotheses:
            for g in self.grid:
                try:
                    out.append((k, SimScenario(self.scenario, h, g, self.n)))
                except ScenarioError as exc:
                    out.append((k, exc))
                k += 1
        return out


_DEFAULT_GRIDS = {"A": A_GRID, "B1": B_GRID, "B2": B_GRID, "C": C_GRID}


def load_sweep(source):
    """Parse a sweep configuration from a JSON file path or a dict.

    Keys: ``scenario`` (required), ``hypotheses`` (or ``hypothesis``),
    ``grid``, ``n``, ``reps``, ``estimators``, ``seed``, ``bootstrap_B``,
    ``folds``, ``grid_step``, ``alpha``.
    """
    if isinstance(source, dict):
        raw = dict(source)
    else:
        with open(source, encoding="utf-8") as fh:
            raw = json.load(fh)
    if "scenario" not in raw:
        raise ValueError("sweep config needs a 'scenario' key")
    label = raw.pop("scenario")
    if label not in LABELS:
        raise ValueError(f"unknown scenario {label!r}")
    hyp = raw.pop("hypotheses", raw.pop("hypothesis", None))
    if hyp is None:
        hyp = ("null",) if label == "B2" else ("alternative",)
    if isinstance(hyp, str):
        hyp = (hyp,)
    grid = tuple(float(g) for g in raw.pop("grid", _DEFAULT_GRIDS[label]))
    known = {"n", "reps", "estimators", "seed", "bootstrap_B", "folds", "grid_step", "alpha"}
    extra = set(raw) - known
    if extra:
        raise ValueError(f"unknown sweep config keys: {sorted(extra)}")
    if "estimators" in raw:
        raw["estimators"] = tuple(raw["estimators"])
        bad = set(raw["estimators"]) - set(METHODS)
        if bad:
            raise ValueError(f"unknown estimators: {sorted(bad)}")
    cfg = SweepConfig(label, tuple(hyp), grid, **raw)
    if cfg.reps < 1 or cfg.n < 4:
        raise ValueError("reps must be >= 1 and n >= 4")
    if cfg.bootstrap_B and cfg.bootstrap_B < 100:
        raise ValueError("bootstrap_B must be 0 (no bootstrap) or at least 100")
    return cfg


SUMMARY_FIELDS = ("scenario", "hypothesis", "shape", "n", "cell", "reps", "seed",
                  "bootstrap_B", "true_tau", "method", "bias", "se", "rmse", "coverage",
                  "rejection", "mean_omega", "n_failed", "n_used", "power_Y1", "power_Y2",
                  "power_Y3")


def summary_rows(summary):
    sc = summary.scenario
    for row in summary.rows:
        d = {
            "scenario": sc.label, "hypothesis": sc.hypothesis, "shape": sc.shape, "n": sc.n,
            "cell": summary.cell, "reps": summary.reps, "seed": summary.seed,
            "bootstrap_B": summary.bootstrap_B, "true_tau": summary.true_tau,
        }
        d.update(asdict(row))
        for p, v in enumerate(summary.endpoint_rejection):
            d[f"power_Y{p + 1}"] = v
        yield d


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary_csv(summaries, path_or_file):
    """One row per (cell, estimator); reals written with ``repr`` for exact reruns."""
    def _write(fh):
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for s in summaries:
            for d in summary_rows(s):
                w.writerow([_fmt(d[k]) for k in SUMMARY_FIELDS])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)


def write_replicates_csv(summaries, path):
    """Long-format per-replicate audit file."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "replicate", "method", "estimate", "std_error", "ci_low",
                    "ci_high", "weight_on_sem"])
        for s in summaries:
            for m, rec in s.records.items():
                for r, vals in enumerate(rec):
                    w.writerow([s.cell, r, m] + [_fmt(float(v)) for v in vals])
