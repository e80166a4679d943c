import math

import numpy as np
import pytest

from mcvi import exact
from mcvi.distributions import ConditionalLinearGaussian, DiagGaussian
from mcvi.experiments import GaussianChain
from mcvi.markov import HMCParams
from mcvi.targets import bivariate_gaussian_target, standard_normal_target

GRID1 = exact.Grid(((-12.0, 12.0),), (2001,))
GRID2 = exact.Grid2D([(-45, 45), (-45, 45)], (301, 301))


def test_grid_validation_and_refinement():
    with pytest.raises(ValueError):
        exact.Grid(((-1.0, 1.0),), (8,))
    with pytest.raises(ValueError):
        exact.Grid(((0, 1), (0, 1), (0, 1)), (32, 32, 32))
    g = exact.Grid(((-1.0, 1.0),), (33,)).refined(2)
    assert g.shape == (65,)
    assert g.weights().sum() == pytest.approx(2.0)


def test_standard_normal_normalizer():
    assert exact.log_normalizer(standard_normal_target(1), GRID1) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-9)


def test_bivariate_normalizer():
    t = bivariate_gaussian_target(1.0, 10.0)
    assert exact.log_normalizer(t, GRID2) == pytest.approx(math.log(10 * math.pi), abs=1e-6)


def test_grid_too_small():
    with pytest.raises(exact.GridTooSmallError):
        exact.log_normalizer(standard_normal_target(1), exact.Grid(((-2.0, 2.0),), (101,)))


def test_posterior_table_mass_is_one():
    p = exact.posterior_table(bivariate_gaussian_target(1.0, 10.0), GRID2)
    assert exact.table_mass(p, GRID2) == pytest.approx(1.0, abs=1e-8)


def test_gaussian_kl_closed_form():
    q = exact.gaussian_table([1.0], [[1.0]], GRID1)
    p = exact.gaussian_table([0.0], [[1.0]], GRID1)
    assert exact.exact_kl(q, p, GRID1) == pytest.approx(0.5, abs=1e-8)
    assert exact.exact_kl(q, q, GRID1) == 0.0


def test_kl_variance_mismatch():
    q = exact.gaussian_table([0.0], [[4.0]], GRID1)
    p = exact.gaussian_table([0.0], [[1.0]], GRID1)
    # KL(N(0,4) || N(0,1)) = (4 - 1 - log 4) / 2
    assert exact.exact_kl(q, p, GRID1) == pytest.approx(0.5 * (3 - math.log(4)), abs=1e-6)


def test_kl_log_handles_underflowing_tails():
    lq = exact.log_gaussian_table([0.0], [[1.0]], GRID1)
    lp = exact.log_gaussian_table([3.0], [[0.01]], GRID1)
    # KL(N(0,1) || N(3,0.01)) = log(0.1) + (1 + 9)/(2 * 0.01) - 1/2
    assert exact.exact_kl_log(lq, lp, GRID1) == pytest.approx(math.log(0.1) + 500 - 0.5, rel=1e-6)


def test_kl_infinite_when_support_missing():
    q = np.ones(GRID1.shape) / 24
    p = q.copy()
    p[100] = 0.0
    assert exact.exact_kl(q, p, GRID1) == math.inf
    with pytest.raises(ValueError):
        exact.exact_kl(-q, p, GRID1)
    with pytest.raises(ValueError):
        exact.exact_kl(q, p[:10], GRID1)


def test_r_squared_perfect_for_tempered_table():
    p = exact.gaussian_table([0.0], [[1.0]], GRID1)
    assert exact.r_squared_accuracy(p**0.5, p, GRID1) == pytest.approx(1.0, abs=1e-12)


def test_r_squared_mismatch_below_one():
    x = GRID1.points()[:, 0]
    p = np.exp(-0.5 * x**2)
    q = np.exp(-np.abs(x))
    r2 = exact.r_squared_accuracy(q, p, GRID1)
    assert 0.0 < r2 < 1.0


def test_r_squared_undefined_for_flat_table():
    p = exact.gaussian_table([0.0], [[1.0]], GRID1)
    with pytest.raises(exact.UndefinedMeasureError):
        exact.r_squared_accuracy(np.ones(GRID1.shape), p, GRID1)


def test_kl_plus_elbo_equals_log_z():
    t = bivariate_gaussian_target(1.0, 10.0)
    P = np.array(t.P, dtype=float)
    m, S = np.array([1.0, -2.0]), np.array([[2.0, 0.3], [0.3, 5.0]])
    kl = exact.exact_kl_log(exact.log_gaussian_table(m, S, GRID2), exact.log_posterior_table(t, GRID2), GRID2)
    elbo = exact.gaussian_elbo(m, S, P, np.zeros(2))
    assert kl + elbo == pytest.approx(math.log(10 * math.pi), abs=1e-6)


def test_quadratic_expectation_exact_for_quadratics():
    f = lambda u: 1.0 + 2 * u[0] + 3 * u[1] ** 2 - u[0] * u[1]
    assert exact.quadratic_expectation(f, 2) == pytest.approx(4.0)
    g = lambda u: u[0] ** 4
    assert exact.gauss_hermite_expectation(g, 1, nodes=3) == pytest.approx(3.0)


def test_sweep_moments_converge_to_target():
    t = bivariate_gaussian_target(1.0, 10.0)
    P = np.array(t.P, dtype=float)
    m, S = exact.sweep_moments(P, np.zeros(2), [-10.0, -10.0], np.eye(2) * 1e-10, [0.0] * 2000)
    np.testing.assert_allclose(S, np.linalg.inv(P), rtol=1e-6)
    np.testing.assert_allclose(m, 0.0, atol=1e-6)


def test_sweep_moments_match_gaussian_chain_bound():
    model = GaussianChain(T=10, kind="overrelax", seed=0)
    p = model.initial_params()
    p["alpha_raw"] = np.array(np.arctanh(-0.74))
    p = model.refit(p)
    ev = model.evaluate(p)
    # inverse models are fitted from samples, so the bound sits slightly under log Z - KL
    assert ev["exact_bound"] <= ev["log_z"] - ev["exact_kl"] + 1e-9
    assert ev["exact_bound"] == pytest.approx(3.44417, abs=0.01)
    assert ev["exact_kl"] == pytest.approx(0.0, abs=0.01)


def test_zero_step_marginal_equals_q0():
    t = standard_normal_target(1)
    q0 = DiagGaussian([0.3], [math.log(0.8)])
    mom = ConditionalLinearGaussian([[[0.0]], [[0.0]]], [0.0], [0.0])
    lq = exact.log_marginal_q_density(t, q0, mom, HMCParams(math.log(0.1), [0.0], 0), GRID1,
                                      exact.Grid(((-8.0, 8.0),), (201,)))
    ref = exact.log_gaussian_table([0.3], [[0.64]], GRID1)
    np.testing.assert_allclose(lq, ref, atol=1e-8)


def test_one_step_marginal_has_unit_mass():
    t = standard_normal_target(1)
    q0 = DiagGaussian([0.3], [math.log(0.8)])
    mom = ConditionalLinearGaussian([[[0.2]], [[0.1]]], [0.0], [0.0])
    q = exact.marginal_q_density(t, q0, mom, HMCParams(math.log(0.3), [0.0], 3), GRID1,
                                 exact.Grid(((-8.0, 8.0),), (401,)))
    assert exact.table_mass(q, GRID1) == pytest.approx(1.0, abs=1e-6)


def test_export_table_csv(tmp_path):
    g = exact.Grid(((0.0, 1.0),), (32,))
    path = tmp_path / "t.csv"
    exact.export_table_csv(path, g, np.arange(32.0))
    lines = path.read_text().splitlines()
    assert lines[0] == "z1,density" and len(lines) == 33 and lines[-1] == "1,31"
