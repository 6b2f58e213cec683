import csv
import math

import numpy as np
import pytest

from hiddenspend.errors import ConfigError, DataError
from hiddenspend.gibbs import (COEF_NAMES, GibbsConfig, PriorSpec, derive_stream,
                               draw_column_names, init_chain_state, relabel_draw,
                               run_chain, run_chains, sample_coefficients,
                               sample_initial_dist, sample_precision, sample_states,
                               sample_transition_matrix, write_draws_csv,
                               write_paths_csv)
from hiddenspend.hmm import HmmParams, StatePath, emission_loglik_matrix, path_joint_loglik
from hiddenspend.stage1 import ResidualPairs


def small_residuals(T=40, seed=11):
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, 0.2, (T, 2))
    e[T // 2:, 1] += 0.5
    return ResidualPairs(e1=e[:, 0], e2=e[:, 1]), rng.uniform(0.0, 0.5, T)


def test_prior_spec_validation():
    PriorSpec()  # defaults are legal
    with pytest.raises(ConfigError):
        PriorSpec(coef_variance=0.0)
    with pytest.raises(ConfigError):
        PriorSpec(wishart_df=2.5)
    with pytest.raises(ConfigError):
        PriorSpec(wishart_scale=np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ConfigError):
        PriorSpec(wishart_scale=np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConfigError):
        PriorSpec(mix=np.array([1.0, 0.0]))
    with pytest.raises(ConfigError):
        PriorSpec(mix=np.array([1.0]))
    assert PriorSpec().for_states(3).num_states == 3
    d = PriorSpec().to_dict()
    assert d["coef_variance"] == 1e6 and d["wishart_df"] == 4.0


def test_gibbs_config_validation():
    GibbsConfig(seed=0, burn_in=0, kept_draws=1)
    for bad in (dict(seed=-1), dict(burn_in=-1), dict(kept_draws=0),
                dict(thin=0), dict(num_chains=0), dict(num_states=1)):
        with pytest.raises(ConfigError):
            GibbsConfig(**{"seed": 1, "burn_in": 0, "kept_draws": 5, **bad})


def test_derive_stream_deterministic_and_distinct():
    a = derive_stream(42, 0).standard_normal(4)
    b = derive_stream(42, 0).standard_normal(4)
    c = derive_stream(42, 1).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_chain_state_prior_means():
    priors = PriorSpec()
    config = GibbsConfig(seed=3, burn_in=1, kept_draws=2)
    params, path = init_chain_state(priors, config, 25, np.random.default_rng(1))
    np.testing.assert_allclose(params.pin, [0.5, 0.5])
    np.testing.assert_allclose(params.P, 0.5)
    np.testing.assert_array_equal(params.theta, np.zeros((3, 2)))
    np.testing.assert_allclose(params.omega, 4.0 * np.eye(2))
    np.testing.assert_allclose(params.sigma, 0.25 * np.eye(2))
    assert path.num_periods == 25
    assert set(np.unique(path.values)) <= {1, 2}

    with pytest.raises(ConfigError):
        init_chain_state(priors, GibbsConfig(seed=0, burn_in=0, kept_draws=1,
                                             num_states=3), 10,
                         np.random.default_rng(0))


def test_relabel_draw_identities():
    rng = np.random.default_rng(21)
    pairs, z = small_residuals(T=12)
    theta = np.array([[0.3, -0.1], [1.2, 0.0], [0.2, -0.6]])
    params = HmmParams(
        pin=np.array([0.3, 0.7]),
        P=np.array([[0.9, 0.1], [0.2, 0.8]]),
        theta=theta,
        sigma=np.array([[0.05, 0.01], [0.01, 0.08]]),
        omega=np.linalg.inv(np.array([[0.05, 0.01], [0.01, 0.08]])),
    )
    path = StatePath(values=rng.integers(1, 3, 12), num_states=2)
    flipped, new_path = relabel_draw(params, path)

    assert flipped.theta[2, 1] == 0.6
    np.testing.assert_allclose(flipped.theta[0], theta[0] + 3.0 * theta[2])
    np.testing.assert_allclose(flipped.theta[1], theta[1])
    np.testing.assert_allclose(flipped.pin, params.pin[::-1])
    np.testing.assert_allclose(flipped.P, params.P[::-1, ::-1])
    np.testing.assert_array_equal(new_path.values, 3 - path.values)

    # Per-period emission means are untouched by the label swap.
    old = emission_loglik_matrix(pairs, z, params)
    new = emission_loglik_matrix(pairs, z, flipped)
    np.testing.assert_allclose(new, old[:, ::-1], atol=1e-12)
    assert path_joint_loglik(new, flipped.pin, flipped.P, new_path) == pytest.approx(
        path_joint_loglik(old, params.pin, params.P, path), abs=1e-10)

    # Already-identified draws pass through unchanged, as do K=3 draws.
    same, same_path = relabel_draw(flipped, new_path)
    assert same is flipped and same_path is new_path


def test_run_chain_retention_and_determinism():
    pairs, z = small_residuals()
    priors = PriorSpec(coef_variance=100.0)
    config = GibbsConfig(seed=17, burn_in=50, kept_draws=40, thin=3)

    a = run_chain(pairs, z, priors, config, derive_stream(17, 0))
    b = run_chain(pairs, z, priors, config, derive_stream(17, 0))
    c = run_chain(pairs, z, priors, config, derive_stream(18, 0))

    assert a.num_draws == 40
    assert a.paths.shape == (40, 40) and a.paths.dtype == np.int16
    assert a.theta.shape == (40, 3, 2)
    assert a.identification == "sign constraint: competitor state coefficient >= 0"
    assert a.relabel_count >= 0
    assert np.all(a.theta[:, 2, 1] >= 0.0)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.paths, b.paths)
    assert not np.array_equal(a.theta, c.theta)

    with pytest.raises(DataError):
        run_chain(ResidualPairs(e1=np.zeros(1), e2=np.zeros(1)), np.zeros(1),
                  priors, config, derive_stream(17, 0))
    with pytest.raises(DataError):
        run_chain(pairs, z[:-1], priors, config, derive_stream(17, 0))


def test_run_chain_thinning_subsamples_the_long_run():
    pairs, z = small_residuals(T=20, seed=4)
    priors = PriorSpec(coef_variance=100.0)
    dense = run_chain(pairs, z, priors,
                      GibbsConfig(seed=5, burn_in=0, kept_draws=30, thin=1),
                      derive_stream(5, 0))
    thinned = run_chain(pairs, z, priors,
                        GibbsConfig(seed=5, burn_in=0, kept_draws=10, thin=3),
                        derive_stream(5, 0))
    np.testing.assert_array_equal(thinned.theta, dense.theta[2::3])
    np.testing.assert_array_equal(thinned.paths, dense.paths[2::3])

    burned = run_chain(pairs, z, priors,
                       GibbsConfig(seed=5, burn_in=12, kept_draws=18, thin=1),
                       derive_stream(5, 0))
    np.testing.assert_array_equal(burned.sigma, dense.sigma[12:])


def test_run_chain_reduced_model_pins_state_row():
    pairs, z = small_residuals(T=30, seed=8)
    config = GibbsConfig(seed=9, burn_in=20, kept_draws=15)
    reduced = run_chain(pairs, z, PriorSpec(), config, derive_stream(9, 0),
                        latent_activity=False)
    np.testing.assert_array_equal(reduced.theta[:, 2, :], 0.0)
    assert reduced.identification == "state row fixed at zero (reduced model)"
    assert reduced.relabel_count == 0


def test_run_chains_assigns_indices():
    pairs, z = small_residuals(T=16, seed=2)
    config = GibbsConfig(seed=31, burn_in=10, kept_draws=5, num_chains=3)
    chains = run_chains(pairs, z, PriorSpec(coef_variance=100.0), config)
    assert [ch.chain_index for ch in chains] == [0, 1, 2]
    assert not np.array_equal(chains[0].theta, chains[1].theta)
    # Chain 0 matches a direct run with the derived stream.
    direct = run_chain(pairs, z, PriorSpec(coef_variance=100.0),
                       config, derive_stream(31, 0))
    np.testing.assert_array_equal(chains[0].theta, direct.theta)


def test_draws_csv_round_trip(tmp_path):
    pairs, z = small_residuals(T=14, seed=6)
    config = GibbsConfig(seed=23, burn_in=5, kept_draws=8)
    samples = run_chain(pairs, z, PriorSpec(coef_variance=100.0), config,
                        derive_stream(23, 0))

    draws_file = tmp_path / "draws.csv"
    write_draws_csv(samples, str(draws_file))
    with open(draws_file, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["draw"] + draw_column_names(2)
    assert rows[0][1:] == ["pin[1]", "pin[2]", "P[1,1]", "P[1,2]", "P[2,1]",
                           "P[2,2]", *COEF_NAMES, "sigma[1,1]", "sigma[1,2]",
                           "sigma[2,2]", "omega[1,1]", "omega[1,2]", "omega[2,2]"]
    assert len(rows) == 9
    # repr round-trip is exact.
    assert float(rows[3][1]) == samples.pin[2, 0]
    assert float(rows[3][7]) == samples.theta[2, 0, 0]
    assert float(rows[3][12]) == samples.theta[2, 2, 1]
    assert float(rows[3][14]) == samples.sigma[2, 0, 1]

    paths_file = tmp_path / "paths.csv"
    write_paths_csv(samples, str(paths_file))
    with open(paths_file, newline="") as handle:
        prows = list(csv.reader(handle))
    assert prows[0] == ["draw"] + [f"x[{t}]" for t in range(1, 15)]
    got = np.array([[int(v) for v in row[1:]] for row in prows[1:]])
    np.testing.assert_array_equal(got, samples.paths)


# ---------------------------------------------------------------------------
# Joint-distribution test of the full sweep kernel.
#
# Two simulators of the same joint law over (parameters, path, data):
#   marginal-conditional: iid draws from the prior, then data given them;
#   successive-conditional: alternate the package's posterior sweep with a
#     fresh data draw given the current parameters and path.
# If every full conditional in the sweep is correct, both sides share every
# moment; a broken conditional shows up as a diverging mean.
#
# The prior is deliberately tight and the emissions deliberately noisy
# (coefficient variance 1, Wishart scale 25·I so noise sd ~ 2.2 over T=8):
# when the data dominates the coefficient conditional the theta↔data
# coupling behaves like a near-unit-root autoregression and the state
# coefficient's autocorrelation time runs to thousands of sweeps, which no
# affordable batch size can cover.  Balancing prior and data precision
# keeps every statistic's autocorrelation time in single digits while the
# sweep still exercises every formula.  Raw covariance entries are excluded
# (an inverse-Wishart with df 5 has no finite variance for them); the
# precision entries and the log-determinant carry the same information.
# ---------------------------------------------------------------------------

GEWEKE_T = 8
GEWEKE_SCALE_SD = 5.0
GEWEKE_PRIORS = PriorSpec(coef_variance=1.0, wishart_df=5.0,
                          wishart_scale=GEWEKE_SCALE_SD**2 * np.eye(2))
STAT_NAMES = ("th0a", "th1a", "th2b", "w11", "w22", "w12", "logdet_sigma",
              "n2", "P11", "P22", "pin1", "mean_e1", "log_var_e2")


def _geweke_stats(theta, omega, P, pin, x, E):
    sign, logdet_omega = np.linalg.slogdet(omega)
    return (
        theta[0, 0], theta[1, 0], theta[2, 1],
        omega[0, 0], omega[1, 1], omega[0, 1],
        -logdet_omega,
        float(np.sum(x == 2)),
        P[0, 0], P[1, 1], pin[0],
        float(E[:, 0].mean()),
        math.log(float(E[:, 1].var())),
    )


def _marginal_conditional(num_draws, z, rng):
    """Vectorised iid draws of (parameters, path, data) statistics."""
    T = z.shape[0]
    sd = math.sqrt(GEWEKE_PRIORS.coef_variance)
    flat = rng.normal(0.0, sd, (num_draws, 6))
    theta = np.stack([flat[:, :3], flat[:, 3:]], axis=2)  # (n, 3, 2)

    # Bartlett draw of Omega ~ Wishart(df=5, scale s²·I): Omega = A·Aᵀ/s².
    s = GEWEKE_SCALE_SD
    a = np.sqrt(rng.chisquare(5.0, num_draws))
    b = rng.standard_normal(num_draws)
    c = np.sqrt(rng.chisquare(4.0, num_draws))
    w11, w12, w22 = a * a / s**2, a * b / s**2, (b * b + c * c) / s**2
    logdet_sigma = 4.0 * math.log(s) - (2.0 * np.log(a) + 2.0 * np.log(c))

    # Dirichlet(1, 1) marginals are uniform.
    P11 = rng.random(num_draws)
    P22 = rng.random(num_draws)
    pin1 = rng.random(num_draws)

    x = np.empty((num_draws, T), dtype=np.int64)
    x[:, 0] = np.where(rng.random(num_draws) < pin1, 1, 2)
    for t in range(1, T):
        stay1 = np.where(x[:, t - 1] == 1, P11, 1.0 - P22)
        x[:, t] = np.where(rng.random(num_draws) < stay1, 1, 2)

    mean = (theta[:, None, 0, :] + z[None, :, None] * theta[:, None, 1, :]
            + x[:, :, None].astype(float) * theta[:, None, 2, :])
    # eta = s·A^{-T} xi ~ N(0, Sigma) with Omega = A·Aᵀ/s².
    xi = rng.standard_normal((num_draws, T, 2))
    e1 = s * (xi[:, :, 0] / a[:, None] - xi[:, :, 1] * (b / (a * c))[:, None])
    e2 = s * (xi[:, :, 1] / c[:, None])
    E = mean + np.stack([e1, e2], axis=2)

    stats = np.column_stack([
        theta[:, 0, 0], theta[:, 1, 0], theta[:, 2, 1],
        w11, w22, w12, logdet_sigma,
        (x == 2).sum(axis=1).astype(float),
        P11, P22, pin1,
        E[:, :, 0].mean(axis=1),
        np.log(E[:, :, 1].var(axis=1)),
    ])
    return stats


def _prior_draw_scalar(z, rng):
    sd = math.sqrt(GEWEKE_PRIORS.coef_variance)
    flat = rng.normal(0.0, sd, 6)
    theta = np.column_stack([flat[:3], flat[3:]])
    a = math.sqrt(rng.chisquare(5.0))
    b = rng.standard_normal()
    c = math.sqrt(rng.chisquare(4.0))
    A = np.array([[a, 0.0], [b, c]]) / GEWEKE_SCALE_SD
    omega = A @ A.T
    sigma = np.linalg.inv(omega)
    sigma = 0.5 * (sigma + sigma.T)
    P = np.array([rng.dirichlet([1.0, 1.0]), rng.dirichlet([1.0, 1.0])])
    pin = rng.dirichlet([1.0, 1.0])
    T = z.shape[0]
    x = np.empty(T, dtype=np.int64)
    x[0] = 1 if rng.random() < pin[0] else 2
    for t in range(1, T):
        row = P[x[t - 1] - 1]
        x[t] = 1 if rng.random() < row[0] else 2
    params = HmmParams(pin=pin, P=P, theta=theta, sigma=sigma, omega=omega)
    E = _emit(params, z, x, rng)
    return params, x, E


def _emit(params, z, x, rng):
    mean = (params.theta[0][None, :] + z[:, None] * params.theta[1][None, :]
            + x[:, None].astype(float) * params.theta[2][None, :])
    chol = np.linalg.cholesky(params.sigma)
    return mean + rng.standard_normal((z.shape[0], 2)) @ chol.T


def _successive_conditional(num_draws, z, rng):
    """Alternate the package's full posterior sweep with a data refresh."""
    params, x, E = _prior_draw_scalar(z, rng)
    pin, P, theta = params.pin, params.P, params.theta
    sigma, omega = params.sigma, params.omega
    stats = np.empty((num_draws, len(STAT_NAMES)))
    for i in range(num_draws):
        pairs = ResidualPairs(e1=E[:, 0], e2=E[:, 1])
        hmm_params = HmmParams(pin=pin, P=P, theta=theta, sigma=sigma, omega=omega)
        path = sample_states(pairs, z, hmm_params, rng)
        P = sample_transition_matrix(path, GEWEKE_PRIORS, rng)
        pin = sample_initial_dist(path, GEWEKE_PRIORS, rng)
        theta = sample_coefficients(pairs, z, path, omega, GEWEKE_PRIORS, rng)
        omega, sigma = sample_precision(pairs, z, path, theta, GEWEKE_PRIORS, rng)
        x = path.values
        refreshed = HmmParams(pin=pin, P=P, theta=theta, sigma=sigma, omega=omega)
        E = _emit(refreshed, z, x, rng)
        stats[i] = _geweke_stats(theta, omega, P, pin, x, E)
    return stats


def _batch_means_se(series, num_batches=200):
    usable = (series.shape[0] // num_batches) * num_batches
    batches = series[:usable].reshape(num_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / math.sqrt(num_batches))


def test_sweep_kernel_matches_prior_joint():
    z = np.random.default_rng(900).uniform(0.0, 0.6, GEWEKE_T)
    mc = _marginal_conditional(80_000, z, np.random.default_rng(901))
    sc = _successive_conditional(40_000, z, np.random.default_rng(902))

    worst = 0.0
    report = []
    for k, name in enumerate(STAT_NAMES):
        se_mc = float(mc[:, k].std(ddof=1) / math.sqrt(mc.shape[0]))
        se_sc = _batch_means_se(sc[:, k])
        zscore = (mc[:, k].mean() - sc[:, k].mean()) / math.hypot(se_mc, se_sc)
        report.append(f"{name}: z={zscore:+.2f}")
        worst = max(worst, abs(zscore))
    assert worst <= 4.0, "; ".join(report)
