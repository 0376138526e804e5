import math
import warnings

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from semtrial import EndpointSpec, TrialDataset, bic_saturated, fit_saturated, saturated_estimate
from semtrial import _kernels as kern
from semtrial.dist import mvn_logpdf
from semtrial.saturated import ate_saturated_binary, fit_comparable, fit_saturated_mixed
from semtrial.sem import _kernel_inputs

from conftest import draw_sem, gaussian_dataset, sem_params


def test_difference_in_means_on_random_datasets():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(6, 400))
        ds = gaussian_dataset(n, int(rng.integers(3, 6)), rng, shift=None)
        y, a = ds.endpoints[:, 0], ds.arm
        closed = y[a == 1].sum() / (a == 1).sum() - y[a == 0].sum() / (a == 0).sum()
        assert abs(saturated_estimate(ds).estimate - closed) <= 1e-12


def test_standard_error_unpooled(rng):
    ds = gaussian_dataset(80, 3, rng)
    y, a = ds.endpoints[:, 0], ds.arm
    se = math.sqrt(y[a == 0].var(ddof=1) / (a == 0).sum() + y[a == 1].var(ddof=1) / (a == 1).sum())
    r = saturated_estimate(ds)
    assert r.std_error == pytest.approx(se, rel=1e-12)
    assert r.ci_high - r.ci_low == pytest.approx(2 * 1.959963984540054 * se, rel=1e-12)


def test_loglik_is_maximised_gaussian_likelihood(rng):
    ds = gaussian_dataset(60, 4, rng, shift=np.array([0.3, 0.1, 0.0, -0.2]))
    fit = fit_saturated(ds)
    mean = fit.alpha + np.outer(ds.arm, fit.beta)
    direct = sum(mvn_logpdf(y, m, fit.sigma) for y, m in zip(ds.endpoints, mean))
    assert fit.loglik == pytest.approx(direct, rel=1e-12)
    assert fit.n_params == 2 * 4 + 10
    # any perturbation of the MLE lowers the likelihood
    worse = sum(mvn_logpdf(y, m + 0.01, fit.sigma * 1.01) for y, m in zip(ds.endpoints, mean))
    assert worse < fit.loglik
    assert bic_saturated(fit, ds.n) == pytest.approx(-2 * fit.loglik + 18 * math.log(60))


def test_kernel_saturated_loglik_matches_reference(rng):
    for K in (0, 2, 4):
        p = sem_params(3, K, rng=rng)
        ds = draw_sem(p, 300, rng)
        Y, arm, _ = _kernel_inputs(ds)
        ll, k = kern.saturated_loglik(Y, arm, K)
        ref = fit_comparable(ds)
        assert ll == pytest.approx(ref.loglik, rel=1e-10)
        assert k == ref.n_params


def test_mixed_saturated_parameter_count(rng):
    ds = draw_sem(sem_params(3, 2, rng=rng), 200, rng)
    assert fit_saturated_mixed(ds).n_params == 2 + 6 + 3
    ds4 = draw_sem(sem_params(3, 4, rng=rng), 200, rng)
    # 2*(K-1) level probabilities, Q*(K+1) regression coefficients, Q(Q+1)/2 covariances
    assert fit_saturated_mixed(ds4).n_params == 6 + 10 + 3


def test_binary_proportion_difference(rng):
    ds = draw_sem(sem_params(3, 2, rng=rng), 301, rng)
    y, a = ds.endpoints[:, 0], ds.arm
    p1, p0 = y[a == 1].mean(), y[a == 0].mean()
    r = ate_saturated_binary(ds)
    assert r.estimate == pytest.approx(p1 - p0, abs=1e-15)
    se = math.sqrt(p1 * (1 - p1) / (a == 1).sum() + p0 * (1 - p0) / (a == 0).sum())
    assert r.std_error == pytest.approx(se, rel=1e-13)


def test_degenerate_binary_arm_is_flagged():
    arm = np.array([0, 0, 0, 1, 1, 1])
    Y = np.column_stack([[0, 0, 0, 1, 0, 1], np.arange(6.0), np.arange(6.0) ** 2])
    ds = TrialDataset(arm, Y, (EndpointSpec("y", "binary"), EndpointSpec("a"), EndpointSpec("b")))
    with pytest.warns(RuntimeWarning):
        r = ate_saturated_binary(ds)
    assert "degenerate-arm" in r.flags


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_gives_identical_bits(seed):
    rng = np.random.default_rng(seed)
    ds = gaussian_dataset(40, 3, rng)
    perm = rng.permutation(ds.n)
    a, b = fit_saturated(ds), fit_saturated(ds.subset(perm))
    assert a.loglik == b.loglik
    assert saturated_estimate(ds).estimate == saturated_estimate(ds.subset(perm)).estimate


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10))
def test_affine_equivariance(shift, scale):
    rng = np.random.default_rng(3)
    ds = gaussian_dataset(30, 3, rng)
    moved = TrialDataset(ds.arm, ds.endpoints * scale + shift, ds.specs)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert saturated_estimate(moved).estimate == pytest.approx(
            scale * saturated_estimate(ds).estimate, rel=1e-9, abs=1e-12)
