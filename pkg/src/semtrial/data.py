"""Two-arm trial datasets: endpoint metadata, CSV ingestion and arm summaries."""

import csv
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special

KINDS = ("continuous", "binary", "ordinal")
METHODS = ("Saturated", "SEM", "BIC-MA", "SL-MA")
ESTIMANDS = ("ATE", "probit-coefficient", "concordance")


class DataValidationError(ValueError):
    """Input data violate the dataset contract."""


@dataclass(frozen=True)
class EndpointSpec:
    name: str
    kind: str = "continuous"
    levels: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataValidationError(f"unknown endpoint kind {self.kind!r}")
        if self.kind == "continuous" and self.levels not in (0,):
            raise DataValidationError("continuous endpoints take no level count")
        if self.kind == "binary" and self.levels not in (0, 2):
            raise DataValidationError("binary endpoints have exactly 2 levels")
        if self.kind == "binary":
            object.__setattr__(self, "levels", 2)
        if self.kind == "ordinal" and self.levels < 3:
            raise DataValidationError("ordinal endpoints need K >= 3 levels")

    @property
    def categorical(self):
        return self.kind != "continuous"


@dataclass(frozen=True)
class TrialDataset:
    """Complete-case two-arm dataset; column 0 of ``endpoints`` is the primary."""

    arm: np.ndarray
    endpoints: np.ndarray
    specs: tuple

    def __post_init__(self):
        arm = np.asarray(self.arm)
        Y = np.asarray(self.endpoints, dtype=float)
        specs = tuple(self.specs)
        if Y.ndim != 2:
            raise DataValidationError("endpoints must be an n x P matrix")
        n, P = Y.shape
        if arm.shape != (n,):
            raise DataValidationError("arm must have one entry per subject")
        if not np.all((arm == 0) | (arm == 1)):
            raise DataValidationError("arm values must be 0 or 1")
        if len(specs) != P:
            raise DataValidationError("one EndpointSpec per endpoint column is required")
        if P < 3:
            raise DataValidationError(
                f"at least 3 endpoints are required (got {P}); the one-factor model "
                "is under-identified with 1 endpoint and saturated with 2")
        if np.sum(arm == 0) == 0 or np.sum(arm == 1) == 0:
            raise DataValidationError("both arms must be nonempty")
        if not np.all(np.isfinite(Y)):
            r, c = np.argwhere(~np.isfinite(Y))[0]
            raise DataValidationError(f"missing or non-finite value at row {r}, column {c}")
        for p, spec in enumerate(specs):
            if spec.categorical:
                if p != 0:
                    raise DataValidationError(
                        "only the primary endpoint (first column) may be non-continuous")
                col = Y[:, p]
                if not np.all((col == np.round(col)) & (col >= 0) & (col < spec.levels)):
                    raise DataValidationError(
                        f"endpoint {spec.name!r} must hold integer level codes 0..{spec.levels - 1}")
        arm = arm.astype(np.int64)
        Y = np.ascontiguousarray(Y)
        arm.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "arm", arm)
        object.__setattr__(self, "endpoints", Y)
        object.__setattr__(self, "specs", specs)

    @property
    def n(self):
        return self.endpoints.shape[0]

    @property
    def P(self):
        return self.endpoints.shape[1]

    @property
    def primary(self):
        return self.specs[0]

    @property
    def K(self):
        """Level count of a categorical primary, 0 when it is continuous."""
        return self.specs[0].levels if self.specs[0].categorical else 0

    @property
    def names(self):
        return [s.name for s in self.specs]

    def subset(self, rows):
        rows = np.asarray(rows)
        return TrialDataset(self.arm[rows], self.endpoints[rows], self.specs)


@dataclass(frozen=True)
class EstimateResult:
    method: str
    estimand: str
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    weight_on_sem: float = None
    flags: tuple = field(default=())

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"unknown estimand {self.estimand!r}")
        averaged = self.method in ("BIC-MA", "SL-MA")
        if averaged != (self.weight_on_sem is not None):
            raise ValueError("weight_on_sem is required for, and only for, model averaging")
        if averaged and not 0.0 <= self.weight_on_sem <= 1.0:
            raise ValueError("weight_on_sem must lie in [0, 1]")
        if not (self.ci_low <= self.ci_high) and not math.isnan(self.ci_low):
            raise ValueError("ci_low must not exceed ci_high")

    def to_dict(self):
        return {
            "method": self.method,
            "estimand": self.estimand,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "weight_on_sem": self.weight_on_sem,
            "flags": list(self.flags),
        }


def z_critical(alpha=0.05):
    """Two-sided normal critical value, 1.959964 at the default level."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(special.ndtri(1.0 - alpha / 2.0))


def wald_result(method, estimand, estimate, std_error, alpha=0.05, weight_on_sem=None,
                flags=()):
    """EstimateResult with a symmetric Wald interval."""
    z = z_critical(alpha)
    return EstimateResult(method, estimand, float(estimate), float(std_error),
                          float(estimate - z * std_error), float(estimate + z * std_error),
                          weight_on_sem, tuple(flags))


def _parse_kind(text):
    text = text.strip().lower()
    if text.startswith("ordinal"):
        # "ordinal:K" or "ordinal(K)"
        digits = "".join(ch for ch in text if ch.isdigit())
        if not digits:
            raise DataValidationError("ordinal kinds need a level count, e.g. ordinal:4")
        return "ordinal", int(digits)
    if text in ("continuous", "binary"):
        return text, 0
    raise DataValidationError(f"unknown endpoint kind {text!r}")


def load_csv(path, primary, arm, secondaries, kinds=None):
    """Read a complete-case trial CSV.

    Parameters
    ----------
    path : str or path-like
        UTF-8, comma-delimited file with a header row.
    primary, arm : str
        Column names of the primary endpoint and the 0/1 arm indicator.
    secondaries : list of str
        Secondary endpoint columns, in the order they should be modelled.
    kinds : list of str, optional
        One kind per endpoint (primary first): ``continuous``, ``binary`` or
        ``ordinal:K``. Defaults to all continuous.

    Returns
    -------
    TrialDataset
    """
    columns = [primary] + list(secondaries)
    if kinds is None:
        kinds = ["continuous"] * len(columns)
    if len(kinds) != len(columns):
        raise DataValidationError("need one kind per endpoint (primary first)")
    if len(columns) < 3:
        raise DataValidationError(
            f"at least 3 endpoints are required (got {len(columns)}); the one-factor "
            "model is not identified otherwise")
    specs = []
    for name, k in zip(columns, kinds):
        kind, levels = _parse_kind(k)
        specs.append(EndpointSpec(name, kind, levels))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError("empty CSV file") from None
        header = [h.strip() for h in header]
        missing = [c for c in [arm] + columns if c not in header]
        if missing:
            raise DataValidationError(f"columns not found in header: {missing}")
        pos = {name: header.index(name) for name in [arm] + columns}
        arms = []
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataValidationError(f"row {lineno}: expected {len(header)} fields")
            a = rec[pos[arm]].strip()
            if a not in ("0", "1"):
                raise DataValidationError(
                    f"row {lineno}, column {arm!r}: arm must be 0 or 1, got {a!r}")
            arms.append(int(a))
            vals = []
            for name in columns:
                cell = rec[pos[name]].strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    raise DataValidationError(f"row {lineno}, column {name!r}: missing value")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataValidationError(
                        f"row {lineno}, column {name!r}: not a number: {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise DataValidationError("CSV has no data rows")
    return TrialDataset(np.array(arms), np.array(rows, dtype=float), tuple(specs))


def write_csv(ds, path, arm_name="arm"):
    """Write ``ds`` in the format :func:`load_csv` reads (reals via ``repr``)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([arm_name] + ds.names)
        for a, row in zip(ds.arm, ds.endpoints):
            cells = []
            for spec, v in zip(ds.specs, row):
                cells.append(str(int(v)) if spec.categorical else repr(float(v)))
            w.writerow([str(int(a))] + cells)


def kinds_of(ds):
    out = []
    for s in ds.specs:
        out.append(f"ordinal:{s.levels}" if s.kind == "ordinal" else s.kind)
    return out


@dataclass(frozen=True)
class ArmSummary:
    n0: int
    n1: int
    mean0: np.ndarray
    mean1: np.ndarray
    cov0: np.ndarray
    cov1: np.ndarray


def exact_mean(X):
    """Column means by exactly rounded summation (independent of row order)."""
    X = np.asarray(X, dtype=float)
    return np.array([math.fsum(X[:, j]) for j in range(X.shape[1])]) / X.shape[0]


def exact_crossprod(R):
    """``R.T @ R`` with exactly rounded entries (independent of row order)."""
    m = R.shape[1]
    out = np.empty((m, m))
    for p in range(m):
        for q in range(p + 1):
            out[p, q] = out[q, p] = math.fsum(R[:, p] * R[:, q])
    return out


def arm_split(ds):
    """Per-arm sizes, endpoint means and unbiased (n - 1) covariances."""
    out = {}
    for a in (0, 1):
        Ya = ds.endpoints[ds.arm == a]
        if Ya.shape[0] < 2:
            raise DataValidationError(f"arm {a} has fewer than 2 subjects; covariance undefined")
        m = exact_mean(Ya)
        out[a] = (Ya.shape[0], m, exact_crossprod(Ya - m) / (Ya.shape[0] - 1))
    return ArmSummary(out[0][0], out[1][0], out[0][1], out[1][1], out[0][2], out[1][2])
