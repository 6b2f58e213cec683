import math

import numpy as np
import pytest

from hiddenspend.dataset import transform_dataset
from hiddenspend.errors import ConfigError, DataError
from hiddenspend.gibbs import PriorSpec, sample_coefficients
from hiddenspend.hmm import StatePath, emission_loglik_matrix, marginal_loglik
from hiddenspend.stage1 import RegressionSpec, ResidualPairs, extract_residual_pairs, fit_ols
from hiddenspend.synthetic import (DEFAULT_STATE_EFFECT, GeneratorSpec,
                                   calibrate_state_effect, conditional_density_grid,
                                   default_generator_spec, exact_state_posterior,
                                   generate_dataset, generator_spec_from_dict,
                                   grid_cdf, oracle_accuracy, stationary_distribution)


def small_spec(seed=0, T=12, sigma=None, P=None, pin=None, theta=None):
    return GeneratorSpec(
        num_periods=T,
        pin=np.array([0.5, 0.5]) if pin is None else np.asarray(pin, dtype=float),
        P=np.array([[0.8, 0.2], [0.3, 0.7]]) if P is None else np.asarray(P, dtype=float),
        theta=np.array([[0.0, -0.2], [1.0, 0.0], [0.0, 0.4]]) if theta is None
        else np.asarray(theta, dtype=float),
        sigma=np.array([[0.02, 0.003], [0.003, 0.05]]) if sigma is None
        else np.asarray(sigma, dtype=float),
        z=np.linspace(0.0, 0.4, T),
        seed=seed,
    )


def test_noiseless_limit_hits_state_means():
    spec = small_spec(sigma=np.zeros((2, 2)))
    data = generate_dataset(spec)
    x = data.path.values.astype(float)
    expected = (spec.theta[0][None, :] + spec.z[:, None] * spec.theta[1][None, :]
                + x[:, None] * spec.theta[2][None, :])
    np.testing.assert_array_equal(data.residuals.stacked(), expected)


def test_frozen_chain_all_state_one():
    spec = small_spec(P=np.eye(2), pin=np.array([1.0, 0.0]))
    data = generate_dataset(spec)
    np.testing.assert_array_equal(data.path.values, 1)


def test_transition_frequencies_lln():
    T = 100_000
    P = np.array([[0.8765, 0.1235], [0.04997, 0.95003]])
    spec = GeneratorSpec(
        num_periods=T, pin=stationary_distribution(P), P=P,
        theta=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.3]]),
        sigma=np.eye(2) * 0.02, z=np.zeros(T), seed=314)
    data = generate_dataset(spec)

    x = data.path.values
    for i in range(2):
        rows = np.flatnonzero(x[:-1] == i + 1)
        for j in range(2):
            freq = float(np.mean(x[rows + 1] == j + 1))
            p = P[i, j]
            assert abs(freq - p) <= 3.0 * math.sqrt(p * (1 - p) / rows.size)


def test_same_seed_bit_reproducible():
    a = generate_dataset(default_generator_spec(seed=77))
    b = generate_dataset(default_generator_spec(seed=77))
    np.testing.assert_array_equal(a.path.values, b.path.values)
    np.testing.assert_array_equal(a.residuals.e1, b.residuals.e1)
    np.testing.assert_array_equal(a.residuals.e2, b.residuals.e2)
    np.testing.assert_array_equal(a.table.sales_a, b.table.sales_a)
    np.testing.assert_array_equal(a.table.spend_b_actual, b.table.spend_b_actual)
    c = generate_dataset(default_generator_spec(seed=78))
    assert not np.array_equal(a.residuals.e1, c.residuals.e1)


def test_oracle_single_period_symmetry():
    pairs = ResidualPairs(e1=np.array([0.1]), e2=np.array([-0.2]))
    spec = small_spec(T=1, theta=np.array([[0.0, 0.0], [0.5, 0.5], [0.0, 0.0]]))
    marginals, _ = exact_state_posterior(pairs, np.array([0.3]), spec.hmm_params())
    np.testing.assert_allclose(marginals, [[0.5, 0.5]], atol=1e-12)


def test_oracle_frozen_chain_shares_first_marginal():
    rng = np.random.default_rng(2)
    pairs = ResidualPairs(e1=rng.normal(0.0, 0.1, 5), e2=rng.normal(0.0, 0.1, 5))
    spec = small_spec(T=5, P=np.eye(2), pin=np.array([0.4, 0.6]))
    params = spec.hmm_params()
    # Only the first observation is informative about the (frozen) state.
    loglik = emission_loglik_matrix(pairs, np.zeros(5), params)
    flat = np.exp(loglik[0]) * spec.pin
    first = flat / flat.sum()

    strong = loglik.copy()
    strong[1:] = 0.0
    marginals, _ = exact_state_posterior(pairs, np.zeros(5), params)
    total = np.exp(loglik[1:]).prod(axis=0) * flat
    expected_shared = total / total.sum()
    for t in range(5):
        np.testing.assert_allclose(marginals[t], expected_shared, atol=1e-12)
    assert abs(first @ np.ones(2) - 1.0) < 1e-12


def test_oracle_marginals_normalized_and_loglik_matches_filter():
    rng = np.random.default_rng(3)
    T = 8
    pairs = ResidualPairs(e1=rng.normal(0.0, 0.2, T), e2=rng.normal(0.0, 0.2, T))
    spec = small_spec(T=T)
    params = spec.hmm_params()
    marginals, oracle_ll = exact_state_posterior(pairs, spec.z, params)
    np.testing.assert_allclose(marginals.sum(axis=1), 1.0, atol=1e-12)
    ll = marginal_loglik(emission_loglik_matrix(pairs, spec.z, params),
                         params.pin, params.P)
    assert oracle_ll == pytest.approx(ll, abs=1e-8)


def test_oracle_enumeration_guard():
    T = 25
    pairs = ResidualPairs(e1=np.zeros(T), e2=np.zeros(T))
    spec = small_spec(T=T)
    with pytest.raises(ConfigError, match="2\\^20"):
        exact_state_posterior(pairs, np.zeros(T), spec.hmm_params())


def test_density_grid_standard_normal():
    logpdf = lambda v: -0.5 * v * v - 0.5 * math.log(2 * math.pi)
    grid, density = conditional_density_grid(logpdf, -8.0, 8.0, 2048)
    integral = np.trapezoid(density, grid)
    assert abs(integral - 1.0) < 1e-6
    assert abs(np.trapezoid(grid * density, grid)) < 1e-6


def test_density_grid_shifted_mean():
    logpdf = lambda v: -0.5 * (v - 3.0) ** 2
    grid, density = conditional_density_grid(logpdf, -6.0, 12.0, 4096)
    mean = np.trapezoid(grid * density, grid)
    assert abs(mean - 3.0) < 1e-6


def test_density_grid_rejects_bad_input():
    logpdf = lambda v: 0.0 if v < 1.0 else math.nan
    with pytest.raises(Exception):
        conditional_density_grid(logpdf, -2.0, 2.0, 1024)
    with pytest.raises(ConfigError):
        conditional_density_grid(lambda v: -v * v, -1.0, 1.0, 100)


def test_coefficient_conditional_ks_against_grid():
    """One coordinate of the Gaussian coefficient draw against a grid CDF."""
    rng = np.random.default_rng(1234)
    helper = np.random.default_rng(555)
    T = 12
    z = helper.uniform(0.0, 0.6, T)
    x = helper.integers(1, 3, T)
    E = helper.normal(0.0, 0.5, (T, 2))
    omega = np.array([[30.0, 4.0], [4.0, 12.0]])
    priors = PriorSpec()

    U = np.column_stack([np.ones(T), z, x.astype(float)])
    precision = np.kron(omega, U.T @ U) + np.eye(6) / priors.coef_variance
    cov = np.linalg.inv(precision)
    mean = cov @ (U.T @ E @ omega).flatten(order="F")
    sd0 = math.sqrt(cov[0, 0])

    logpdf = lambda v: -0.5 * ((v - mean[0]) / sd0) ** 2
    grid, density = conditional_density_grid(
        logpdf, mean[0] - 8 * sd0, mean[0] + 8 * sd0, 4096)
    cdf = grid_cdf(grid, density)

    pairs = ResidualPairs(e1=E[:, 0], e2=E[:, 1])
    path = StatePath(values=x, num_states=2)
    num_draws = 100_000
    draws = np.empty(num_draws)
    for i in range(num_draws):
        draws[i] = sample_coefficients(pairs, z, path, omega, priors, rng)[0, 0]

    empirical = np.searchsorted(np.sort(draws), grid, side="right") / num_draws
    ks = float(np.max(np.abs(empirical - cdf)))
    assert ks < 0.01


def test_roundtrip_residuals_within_rounding():
    spec = default_generator_spec(seed=2024)
    data = generate_dataset(spec)
    transformed = transform_dataset(data.table)

    fit_a = fit_ols(transformed, RegressionSpec(response="y1",
                                                predictors=("seasonality", "gift")))
    fit_b = fit_ols(transformed, RegressionSpec(response="y2",
                                                predictors=("market_index",)))
    pairs = extract_residual_pairs(fit_a, fit_b)

    # Without count rounding, the stage-1 residuals equal the generator
    # residuals minus their projection onto the stage-1 design.  Rounding
    # moves each log sale by at most ln(1 + 1/count), and the projection
    # cannot blow that bound up by much.
    design_a = np.column_stack([np.ones(spec.num_periods),
                                transformed.covariates["seasonality"],
                                transformed.covariates["gift"]])
    design_b = np.column_stack([np.ones(spec.num_periods),
                                transformed.covariates["market_index"]])
    proj_a = design_a @ np.linalg.lstsq(design_a, data.residuals.e1, rcond=None)[0]
    proj_b = design_b @ np.linalg.lstsq(design_b, data.residuals.e2, rcond=None)[0]
    bound1 = np.log1p(1.0 / data.table.sales_a).max()
    bound2 = np.log1p(1.0 / data.table.sales_b).max()
    gap1 = np.abs(pairs.e1 - (data.residuals.e1 - proj_a))
    gap2 = np.abs(pairs.e2 - (data.residuals.e2 - proj_b))
    assert float(gap1.max()) <= 25 * bound1
    assert float(gap2.max()) <= 25 * bound2
    # Stage-1 coefficients recover the generator's values to within sampling
    # error (the competitor series carries sd ~ 0.23 noise over 156 weeks).
    assert fit_a.coefficient("gift") == pytest.approx(1.171, abs=0.05)
    assert fit_b.coefficient("market_index") == pytest.approx(0.00008, rel=0.35)


def test_stationary_distribution():
    P = np.array([[0.9, 0.1], [0.3, 0.7]])
    pi = stationary_distribution(P)
    np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pi, [0.75, 0.25], atol=1e-12)


def test_default_spec_shape_and_z_range():
    spec = default_generator_spec(seed=5)
    assert spec.num_periods == 156
    np.testing.assert_allclose(spec.P, [[0.8765, 0.1235], [0.04997, 0.95003]])
    np.testing.assert_allclose(spec.sigma, [[0.0168, 0.0027], [0.0027, 0.05243]])
    assert spec.theta[2, 1] == DEFAULT_STATE_EFFECT
    assert spec.theta[1, 0] == 1.266
    assert np.all(spec.z >= 0.0) and np.all(spec.z <= 0.7)
    assert spec.stage1 is not None

    bare = default_generator_spec(seed=5, include_table=False)
    assert bare.stage1 is None
    data = generate_dataset(bare)
    assert data.table is None


def test_calibration_lands_in_band_and_matches_default():
    effect = calibrate_state_effect()
    assert effect == DEFAULT_STATE_EFFECT
    accuracy = oracle_accuracy(effect, num_periods=4000, seed=383838)
    assert 0.82 <= accuracy <= 0.86


def test_oracle_accuracy_deterministic():
    a = oracle_accuracy(0.4, num_periods=500, seed=9)
    b = oracle_accuracy(0.4, num_periods=500, seed=9)
    assert a == b
    assert 0.5 <= a <= 1.0


def test_generator_spec_from_dict():
    spec = generator_spec_from_dict({"seed": 3, "num_periods": 20})
    assert spec.num_periods == 20 and spec.seed == 3

    override = generator_spec_from_dict({"seed": 1}, seed_override=9)
    assert override.seed == 9

    with pytest.raises(ConfigError, match="seed"):
        generator_spec_from_dict({})
    with pytest.raises(ConfigError, match="unknown"):
        generator_spec_from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(ConfigError):
        generator_spec_from_dict({"seed": 1, "state_effect": 0.4,
                                  "theta": [[0, 0], [1, 0], [0, 0.4]]})
    with pytest.raises(ConfigError):
        generator_spec_from_dict({"seed": 1, "num_periods": 0})

    P = [[0.6, 0.4], [0.2, 0.8]]
    derived = generator_spec_from_dict({"seed": 1, "P": P})
    np.testing.assert_allclose(derived.pin,
                               stationary_distribution(np.array(P)), atol=1e-12)
