import sys

import numpy as np
import pytest

from semtrial import EndpointSpec, SemParams, TrialDataset


def sem_params(P=3, K=0, gamma=0.5, rng=None):
    """A plausible parameter point; random when ``rng`` is given."""
    if rng is None:
        lam = np.array([0.5, 0.7, 0.6, 0.4, 0.8][:P])
        nu = np.linspace(-0.2, 0.3, P)
        theta = 1.0 - lam ** 2
    else:
        lam = rng.uniform(0.3, 0.9, P) * rng.choice([-1.0, 1.0], P)
        nu = rng.normal(0.0, 0.5, P)
        theta = rng.uniform(0.3, 1.2, P)
        gamma = rng.uniform(-0.8, 0.8)
    cuts = np.empty(0)
    if K:
        theta[0] = 1.0
        cuts = np.concatenate([[0.0], np.cumsum(rng.uniform(0.3, 1.0, K - 2) if rng is not None
                                                 else np.full(K - 2, 0.6))])
    return SemParams(nu, lam, gamma, theta, cuts)


def draw_sem(params, n, rng):
    """Sample a dataset from the one-factor model (thresholded primary if categorical)."""
    P, K = params.P, params.K
    arm = np.repeat([0, 1], [n // 2, n - n // 2])
    eta = params.gamma * arm + rng.standard_normal(n)
    Y = params.nu + np.outer(eta, params.lam) + rng.standard_normal((n, P)) * np.sqrt(params.theta)
    specs = [EndpointSpec(f"Y{p + 1}") for p in range(P)]
    if K:
        Y[:, 0] = np.searchsorted(params.thresholds, Y[:, 0])
        specs[0] = EndpointSpec("Y1", "binary") if K == 2 else EndpointSpec("Y1", "ordinal", K)
    return TrialDataset(arm, Y, tuple(specs))


def gaussian_dataset(n, P, rng, shift=None):
    arm = rng.integers(0, 2, n)
    arm[:2] = (0, 1)
    Y = rng.standard_normal((n, P)) @ np.triu(rng.uniform(0.2, 1.0, (P, P)))
    if shift is not None:
        Y += np.outer(arm, shift)
    return TrialDataset(arm, Y, tuple(EndpointSpec(f"Y{p + 1}") for p in range(P)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.REPORT):
        terminalreporter.write_line(line)
