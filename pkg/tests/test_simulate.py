import csv
import io
import math

import numpy as np
import pytest
from scipy import stats

from semtrial import simulate
from semtrial.sem import SemFitError
from semtrial.simulate import (A_GRID, B_GRID, C_GRID, ScenarioError, SimScenario, gen_sim_a,
                               gen_sim_b, gen_sim_c, load_sweep, run_monte_carlo,
                               sim_a_loadings, write_replicates_csv, write_summary_csv)
from semtrial.streams import rng_for


def test_sim_a_design_point():
    gamma, lam = sim_a_loadings(0.35)
    assert gamma == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(lam, [0.5, 0.7, 0.6], atol=1e-15)


def test_all_grid_cells_are_feasible():
    for c in A_GRID:
        SimScenario("A", "alternative", c)
    for s in B_GRID:
        for label in ("B1", "B2"):
            cov = SimScenario(label, "null", s).covariance()
            assert np.linalg.eigvalsh(cov)[0] > 0
    for s in C_GRID:
        SimScenario("C", "alternative", s)
    assert len(A_GRID) == 11 and A_GRID[0] == 0.2 and A_GRID[-1] == 0.7


def test_infeasible_cells_raise():
    with pytest.raises(ScenarioError):
        SimScenario("A", "alternative", 0.75)
    with pytest.raises(ScenarioError, match="s=3"):
        SimScenario("B1", "alternative", 3.0)
    with pytest.raises(ScenarioError):
        SimScenario("B2", "alternative", 1.0)
    with pytest.raises(ScenarioError):
        gen_sim_b("B3", 1.0, 100, rng_for(0))


def test_arms_split_evenly():
    assert SimScenario("A", "null", 0.35).arms == (125, 125)
    ds = gen_sim_a(0.35, "null", 251, rng_for(0))
    assert np.sum(ds.arm == 0) == 125 and ds.n == 251


def test_b1_at_s1_is_sim_a():
    a = SimScenario("A", "alternative", 0.35)
    b = SimScenario("B1", "alternative", 1.0)
    np.testing.assert_allclose(a.covariance(), b.covariance(), atol=1e-15)
    np.testing.assert_allclose(a.means()[1], b.means()[1], atol=1e-15)
    x = gen_sim_a(0.35, "alternative", 100_000, rng_for(1))
    y = gen_sim_b("B1-alt", 1.0, 100_000, rng_for(2))
    for j in range(3):
        for arm in (0, 1):
            p = stats.ks_2samp(x.endpoints[x.arm == arm, j], y.endpoints[y.arm == arm, j]).pvalue
            assert p > 0.01


def test_b1_null_primary_at_s0_is_sem_compatible():
    sc = SimScenario("B1", "null", 0.0)
    lam = np.array([0.0, 0.7, 0.6])
    np.testing.assert_allclose(sc.covariance(), np.diag(1 - lam ** 2) + np.outer(lam, lam),
                               atol=1e-15)
    np.testing.assert_allclose(sc.means()[1], 0.5 * lam, atol=1e-15)


def test_sim_c_at_s1_is_near_one_factor():
    sc = SimScenario("C", "alternative", 1.0)
    lam = np.array([0.72, 0.7, 0.6])
    off = np.outer(lam, lam)
    cov = sc.covariance()
    for i, j in ((0, 1), (0, 2), (1, 2)):
        assert cov[i, j] == pytest.approx(off[i, j], abs=0.01)
    m0, m1 = sc.means()
    np.testing.assert_allclose(m1 - m0, 0.5 * lam, atol=0.005)


@pytest.mark.parametrize("label, hyp, shape", [
    ("A", "alternative", 0.35), ("A", "null", 0.2), ("B1", "alternative", 2.0),
    ("B1", "null", 0.5), ("B2", "null", 2.0), ("C", "alternative", 1.25), ("C", "null", 0.0),
])
def test_generator_moments_at_large_n(label, hyp, shape):
    sc = SimScenario(label, hyp, shape, 1_000_000)
    ds = sc.generate(rng_for(31, 0))
    m0, m1 = sc.means()
    cov = sc.covariance()
    for arm, m in ((0, m0), (1, m1)):
        Y = ds.endpoints[ds.arm == arm]
        n = Y.shape[0]
        first = 1 if label == "C" else 0
        mean_se = np.sqrt(np.diag(cov)[first:] / n)
        assert np.all(np.abs(Y[:, first:].mean(0) - m[first:]) <= 5 * mean_se)
        C = np.cov(Y[:, first:].T)
        V = cov[first:, first:]
        # Var of a sample covariance under normality: (s_ij^2 + s_ii s_jj) / n
        cov_se = np.sqrt((V ** 2 + np.outer(np.diag(V), np.diag(V))) / n)
        assert np.all(np.abs(C - V) <= 5 * cov_se)
    if label == "A" and hyp == "alternative":
        Y0 = ds.endpoints[ds.arm == 0]
        assert np.cov(Y0[:, :2].T)[0, 1] == pytest.approx(0.35, abs=0.005)


def test_sim_c_marginal_rates():
    ds = gen_sim_c(1.0, "alternative", 1_000_000, rng_for(8))
    y = ds.endpoints[:, 0]
    assert abs(y[ds.arm == 0].mean() - 0.15) <= 0.002
    assert abs(y[ds.arm == 1].mean() - 0.25) <= 0.002
    null = gen_sim_c(0.5, "null", 1_000_000, rng_for(9))
    y = null.endpoints[:, 0]
    assert abs(y[null.arm == 1].mean() - y[null.arm == 0].mean()) <= 0.004
    assert SimScenario("C", "alternative", 1.0).true_ate() == pytest.approx(0.10, abs=1e-15)


def test_null_mean_difference_vanishes():
    ds = gen_sim_a(0.35, "null", 1_000_000, rng_for(4))
    d = ds.endpoints[ds.arm == 1].mean(0) - ds.endpoints[ds.arm == 0].mean(0)
    assert np.all(np.abs(d) <= 4 / math.sqrt(1_000_000))


@pytest.fixture(scope="module")
def small_run():
    return run_monte_carlo(SimScenario("A", "alternative", 0.35), 6, bootstrap_B=100, seed=5,
                           cell=2)


def test_summary_invariants(small_run):
    for r in small_run.rows:
        assert r.rmse ** 2 == pytest.approx(r.bias ** 2 + r.se ** 2, abs=1e-10)
        assert 0.0 <= r.coverage <= 1.0 and 0.0 <= r.rejection <= 1.0
        assert r.n_used == 6 and r.n_failed == 0
    assert small_run.row("BIC-MA").mean_omega > 0.5
    assert math.isnan(small_run.row("SEM").mean_omega)
    assert small_run.true_tau == 0.25


def test_determinism_and_replicate_streams(small_run):
    again = run_monte_carlo(SimScenario("A", "alternative", 0.35), 6, bootstrap_B=100, seed=5,
                            cell=2)
    assert again.rows == small_run.rows
    for m, rec in small_run.records.items():
        assert np.array_equal(rec, again.records[m], equal_nan=True)
    head = run_monte_carlo(SimScenario("A", "alternative", 0.35), 3, bootstrap_B=100, seed=5,
                           cell=2)
    for m, rec in head.records.items():
        assert np.array_equal(rec, small_run.records[m][:3], equal_nan=True)


def test_single_replicate():
    s = run_monte_carlo(SimScenario("B2", "null", 1.0), 1, bootstrap_B=0, seed=1)
    for r in s.rows:
        assert r.se == 0.0
        assert r.rmse == pytest.approx(abs(r.bias), abs=1e-15)
    assert s.row("SEM").coverage in (0.0, 1.0)
    assert math.isnan(s.row("SL-MA").coverage)
    with pytest.raises(ValueError):
        run_monte_carlo(SimScenario("B2", "null", 1.0), 0)


def test_failures_are_counted_and_excluded(monkeypatch):
    real = simulate.analyze
    calls = {"k": 0}

    def sometimes(ds, methods, *args, **kwargs):
        if "SEM" in methods:
            calls["k"] += 1
            if calls["k"] == 2:
                raise SemFitError("no")
        return real(ds, methods, *args, **kwargs)

    monkeypatch.setattr(simulate, "analyze", sometimes)
    s = run_monte_carlo(SimScenario("A", "null", 0.35), 4, bootstrap_B=0, seed=3)
    assert s.row("SEM").n_failed == 1 and s.row("SEM").n_used == 3
    assert s.row("Saturated").n_failed == 0


def test_sweep_config_and_csv(tmp_path, small_run):
    cfg = load_sweep({"scenario": "A", "grid": [0.35, 0.9], "reps": 2, "bootstrap_B": 0})
    cells = cfg.cells()
    assert isinstance(cells[0][1], SimScenario) and isinstance(cells[1][1], ScenarioError)
    assert load_sweep({"scenario": "B2"}).hypotheses == ("null",)
    assert load_sweep({"scenario": "C", "hypothesis": "null"}).grid == C_GRID
    for bad in ({"grid": [1]}, {"scenario": "Z"}, {"scenario": "A", "bogus": 1},
                {"scenario": "A", "bootstrap_B": 50}, {"scenario": "A", "estimators": ["X"]}):
        with pytest.raises(ValueError):
            load_sweep(bad)
    buf = io.StringIO()
    write_summary_csv([small_run], buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert [r["method"] for r in rows] == ["Saturated", "SEM", "BIC-MA", "SL-MA"]
    assert float(rows[1]["rmse"]) == small_run.row("SEM").rmse
    path = tmp_path / "long.csv"
    write_replicates_csv([small_run], path)
    assert len(path.read_text().splitlines()) == 1 + 4 * 6
