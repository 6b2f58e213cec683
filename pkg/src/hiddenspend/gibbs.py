"""Bayesian estimation engine: conjugate Gibbs updates over the latent-state
regression model.

Each sweep draws, in fixed order: the full state path (joint
forward-filter/backward-sample move), the transition rows and initial
distribution (Dirichlet), the six emission coefficients (joint Gaussian),
and the error precision (Wishart), then applies the identification
relabeling.  All conditionals are exact; there are no Metropolis steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._fileio import atomic_open
from .errors import ConfigError, DataError, NumericalError
from .hmm import (HmmParams, StatePath, _emission_core, backward_sample,
                  emission_loglik_matrix, forward_filter)
from .stage1 import ResidualPairs

# Column order of theta: focal residual series first.
COEF_NAMES = ("beta0a", "beta1a", "beta2a", "beta0b", "beta1b", "beta2b")


def _identity2() -> np.ndarray:
    return np.eye(2)


def _flat_mix() -> np.ndarray:
    return np.ones(2)


@dataclass(frozen=True)
class PriorSpec:
    """Conjugate priors: N(0, coef_variance) per coefficient, Wishart
    (density ∝ |Ω|^((df-p-1)/2)·exp(-tr(scale·Ω)/2), mean df·scale⁻¹) on the
    precision, Dirichlet(mix) on each transition row and on pin."""

    coef_variance: float = 1e6
    wishart_df: float = 4.0
    wishart_scale: np.ndarray = field(default_factory=_identity2)
    mix: np.ndarray = field(default_factory=_flat_mix)

    def __post_init__(self) -> None:
        object.__setattr__(self, "wishart_scale", np.asarray(self.wishart_scale, dtype=float))
        object.__setattr__(self, "mix", np.asarray(self.mix, dtype=float))
        if not self.coef_variance > 0:
            raise ConfigError("coefficient prior variance must be positive")
        if self.wishart_df < 3:
            raise ConfigError(f"Wishart df {self.wishart_df} below dimension + 1 = 3")
        if self.wishart_scale.shape != (2, 2):
            raise ConfigError("Wishart scale must be 2x2")
        if not np.allclose(self.wishart_scale, self.wishart_scale.T, atol=1e-12, rtol=0.0):
            raise ConfigError("Wishart scale must be symmetric")
        try:
            np.linalg.cholesky(self.wishart_scale)
        except np.linalg.LinAlgError:
            raise ConfigError("Wishart scale must be positive definite") from None
        if self.mix.ndim != 1 or self.mix.size < 2 or np.any(self.mix <= 0):
            raise ConfigError("mix must be a vector of positive entries, length >= 2")

    @classmethod
    def for_states(cls, num_states: int, **kwargs) -> "PriorSpec":
        kwargs.setdefault("mix", np.ones(num_states))
        return cls(**kwargs)

    @property
    def num_states(self) -> int:
        return self.mix.shape[0]

    def to_dict(self) -> dict:
        return {
            "coef_variance": self.coef_variance,
            "wishart_df": self.wishart_df,
            "wishart_scale": self.wishart_scale.tolist(),
            "mix": self.mix.tolist(),
        }


@dataclass(frozen=True)
class GibbsConfig:
    seed: int
    burn_in: int = 2000
    kept_draws: int = 10000
    thin: int = 1
    num_chains: int = 1
    num_states: int = 2

    def __post_init__(self) -> None:
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.kept_draws < 1:
            raise ConfigError("kept_draws must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.num_chains < 1:
            raise ConfigError("num_chains must be >= 1")
        if self.num_states < 2:
            raise ConfigError("num_states must be >= 2")

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "burn_in": self.burn_in,
            "kept_draws": self.kept_draws,
            "thin": self.thin,
            "num_chains": self.num_chains,
            "num_states": self.num_states,
        }


def derive_stream(seed: int, chain_index: int) -> np.random.Generator:
    """Independent stream for one chain, reproducible from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=(chain_index,)))


@dataclass
class PosteriorSamples:
    """Retained draws of one chain plus run metadata.

    Parameter snapshots are stored as stacked arrays; ``params_at`` and
    ``path_at`` materialize single draws as typed objects.
    """

    pin: np.ndarray    # (n, K)
    P: np.ndarray      # (n, K, K)
    theta: np.ndarray  # (n, 3, 2)
    sigma: np.ndarray  # (n, 2, 2)
    omega: np.ndarray  # (n, 2, 2)
    paths: np.ndarray  # (n, T) integer state codes
    config: GibbsConfig
    seed: int
    chain_index: int
    relabel_count: int
    identification: str

    def __post_init__(self) -> None:
        n = self.pin.shape[0]
        if n != self.config.kept_draws:
            raise DataError(f"{n} retained draws, config asked for {self.config.kept_draws}")
        K = self.pin.shape[1]
        expected = {
            "P": (n, K, K), "theta": (n, 3, 2), "sigma": (n, 2, 2),
            "omega": (n, 2, 2),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DataError(f"samples field '{name}' has shape "
                                f"{getattr(self, name).shape}, expected {shape}")
        if self.paths.ndim != 2 or self.paths.shape[0] != n:
            raise DataError("paths array does not match retained draw count")

    @property
    def num_draws(self) -> int:
        return self.pin.shape[0]

    @property
    def num_states(self) -> int:
        return self.pin.shape[1]

    @property
    def num_periods(self) -> int:
        return self.paths.shape[1]

    def params_at(self, i: int) -> HmmParams:
        return HmmParams(pin=self.pin[i].copy(), P=self.P[i].copy(),
                         theta=self.theta[i].copy(), sigma=self.sigma[i].copy(),
                         omega=self.omega[i].copy())

    def path_at(self, i: int) -> StatePath:
        return StatePath(values=self.paths[i].astype(np.int64), num_states=self.num_states)


def init_chain_state(priors: PriorSpec, config: GibbsConfig, num_periods: int,
                     rng: np.random.Generator) -> tuple[HmmParams, StatePath]:
    """Prior-mean parameters and a uniform random path."""
    K = config.num_states
    if priors.num_states != K:
        raise ConfigError(f"mix has length {priors.num_states}, config wants K={K}")
    row = priors.mix / priors.mix.sum()
    omega = priors.wishart_df * np.linalg.inv(priors.wishart_scale)
    omega = 0.5 * (omega + omega.T)
    params = HmmParams(
        pin=row.copy(),
        P=np.tile(row, (K, 1)),
        theta=np.zeros((3, 2)),
        sigma=np.linalg.inv(omega),
        omega=omega,
    )
    path = StatePath(values=rng.integers(1, K + 1, size=num_periods), num_states=K)
    return params, path


def sample_states(residuals: ResidualPairs, z: np.ndarray, params: HmmParams,
                  rng: np.random.Generator) -> StatePath:
    """Joint draw of the full path from its conditional posterior."""
    loglik = emission_loglik_matrix(residuals, z, params)
    filtered, _ = forward_filter(loglik, params.pin, params.P)
    return backward_sample(filtered, params.P, rng)


def _transition_counts(x0: np.ndarray, num_states: int) -> np.ndarray:
    if x0.shape[0] < 2:
        return np.zeros((num_states, num_states))
    flat = x0[:-1] * num_states + x0[1:]
    return np.bincount(flat, minlength=num_states * num_states).reshape(
        num_states, num_states).astype(float)


def _draw_transition(x0: np.ndarray, num_states: int, priors: PriorSpec,
                     rng: np.random.Generator) -> np.ndarray:
    counts = _transition_counts(x0, num_states)
    P = np.empty((num_states, num_states))
    for j in range(num_states):
        P[j] = rng.dirichlet(priors.mix + counts[j])
    return P


def sample_transition_matrix(path: StatePath, priors: PriorSpec,
                             rng: np.random.Generator) -> np.ndarray:
    """Row j ~ Dirichlet(mix + observed j→k transition counts)."""
    if priors.num_states != path.num_states:
        raise ConfigError("mix length does not match the path's state count")
    return _draw_transition(path.values - 1, path.num_states, priors, rng)


def _draw_initial(x0_first: int, num_states: int, priors: PriorSpec,
                  rng: np.random.Generator) -> np.ndarray:
    alpha = priors.mix.copy()
    alpha[x0_first] += 1.0
    return rng.dirichlet(alpha)


def sample_initial_dist(path: StatePath, priors: PriorSpec,
                        rng: np.random.Generator) -> np.ndarray:
    """pin ~ Dirichlet(mix + one-hot of the first state)."""
    if priors.num_states != path.num_states:
        raise ConfigError("mix length does not match the path's state count")
    if path.num_periods < 1:
        raise DataError("empty path has no first state")
    return _draw_initial(int(path.values[0]) - 1, path.num_states, priors, rng)


def _draw_coefficients(E: np.ndarray, z: np.ndarray, x: np.ndarray,
                       omega: np.ndarray, priors: PriorSpec,
                       rng: np.random.Generator, include_activity_term: bool) -> np.ndarray:
    if include_activity_term:
        U = np.column_stack([np.ones(z.shape[0]), z, x])
    else:
        U = np.column_stack([np.ones(z.shape[0]), z])
    d = U.shape[1]
    UtU = U.T @ U
    B = U.T @ E
    precision = np.kron(omega, UtU) + np.eye(2 * d) / priors.coef_variance
    linear = (B @ omega).flatten(order="F")
    try:
        L = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise NumericalError("coefficient conditional precision is not positive definite") from None
    mean = scipy.linalg.solve_triangular(
        L.T, scipy.linalg.solve_triangular(L, linear, lower=True), lower=False)
    draw = mean + scipy.linalg.solve_triangular(L.T, rng.standard_normal(2 * d), lower=False)
    theta = np.zeros((3, 2))
    theta[:d, 0] = draw[:d]
    theta[:d, 1] = draw[d:]
    return theta


def sample_coefficients(residuals: ResidualPairs, z: np.ndarray, path: StatePath,
                        omega: np.ndarray, priors: PriorSpec,
                        rng: np.random.Generator,
                        include_activity_term: bool = True) -> np.ndarray:
    """Joint Gaussian draw of Θ from its full conditional.

    With include_activity_term=False the state row is pinned at zero and the
    remaining four coefficients are drawn (the reduced, no-latent-state model).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[0] != residuals.num_periods or path.num_periods != residuals.num_periods:
        raise DataError("residuals, z, and path lengths disagree")
    return _draw_coefficients(residuals.stacked(), z, path.values.astype(float),
                              omega, priors, rng, include_activity_term)


def _draw_precision(E: np.ndarray, z: np.ndarray, x: np.ndarray, theta: np.ndarray,
                    priors: PriorSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    mu = theta[0][None, :] + z[:, None] * theta[1][None, :] + x[:, None] * theta[2][None, :]
    eps = E - mu
    scale = priors.wishart_scale + eps.T @ eps
    df = priors.wishart_df + E.shape[0]
    try:
        V = np.linalg.inv(scale)
        LV = np.linalg.cholesky(0.5 * (V + V.T))
    except np.linalg.LinAlgError:
        raise NumericalError("accumulated Wishart scale is not positive definite") from None
    # Bartlett construction: lower-triangular with chi-square diagonals.
    A = np.zeros((2, 2))
    A[0, 0] = np.sqrt(rng.chisquare(df))
    A[1, 0] = rng.standard_normal()
    A[1, 1] = np.sqrt(rng.chisquare(df - 1.0))
    F = LV @ A
    omega = F @ F.T
    try:
        sigma = np.linalg.inv(omega)
    except np.linalg.LinAlgError:
        raise NumericalError("sampled precision is singular") from None
    return omega, 0.5 * (sigma + sigma.T)


def sample_precision(residuals: ResidualPairs, z: np.ndarray, path: StatePath,
                     theta: np.ndarray, priors: PriorSpec,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Ω ~ Wishart(df + T, (scale + Σ ε εᵀ)⁻¹); returns (Ω, Σ = Ω⁻¹)."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != residuals.num_periods or path.num_periods != residuals.num_periods:
        raise DataError("residuals, z, and path lengths disagree")
    return _draw_precision(residuals.stacked(), z, path.values.astype(float),
                           np.asarray(theta, dtype=float), priors, rng)


def _relabel_arrays(pin: np.ndarray, P: np.ndarray, theta: np.ndarray,
                    x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # Swap the two labels: the emission mean β0 + β2·x is invariant under
    # x → 3 − x with β2 → −β2, β0 → β0 + 3β2.
    new_theta = theta.copy()
    new_theta[0] = theta[0] + 3.0 * theta[2]
    new_theta[2] = -theta[2]
    return pin[::-1].copy(), P[::-1, ::-1].copy(), new_theta, 3 - x


def relabel_draw(params: HmmParams, path: StatePath) -> tuple[HmmParams, StatePath]:
    """Enforce the identification constraint β2b ≥ 0 by label swapping (K=2).

    For K > 2 no relabeling rule is defined and the pair is returned as-is.
    """
    if params.num_states != 2 or params.theta[2, 1] >= 0:
        return params, path
    pin, P, theta, x = _relabel_arrays(params.pin, params.P, params.theta, path.values)
    return (HmmParams(pin=pin, P=P, theta=theta, sigma=params.sigma, omega=params.omega),
            StatePath(values=x, num_states=2))


def run_chain(residuals: ResidualPairs, z: np.ndarray, priors: PriorSpec,
              config: GibbsConfig, rng: np.random.Generator,
              latent_activity: bool = True) -> PosteriorSamples:
    """Run one chain: burn_in + kept_draws·thin sweeps, fixed update order.

    With latent_activity=False the chain runs the reduced model: no state,
    transition, or initial-distribution sampling, and the state row of Θ is
    held at zero.  Used for the bias comparison.
    """
    z = np.asarray(z, dtype=float)
    T = residuals.num_periods
    if T < 2:
        raise DataError(f"need at least 2 periods, got {T}")
    if z.shape != (T,):
        raise DataError(f"z has shape {z.shape}, expected ({T},)")
    if not np.all(np.isfinite(z)):
        raise DataError("z contains non-finite values")
    K = config.num_states
    params, path = init_chain_state(priors, config, T, rng)

    E = residuals.stacked()
    pin, P = params.pin, params.P
    theta, sigma, omega = params.theta, params.sigma, params.omega
    x = path.values.copy()

    n = config.kept_draws
    out_pin = np.empty((n, K))
    out_P = np.empty((n, K, K))
    out_theta = np.empty((n, 3, 2))
    out_sigma = np.empty((n, 2, 2))
    out_omega = np.empty((n, 2, 2))
    out_paths = np.empty((n, T), dtype=np.int16)

    relabel_count = 0
    total = config.burn_in + n * config.thin
    for sweep in range(total):
        try:
            if latent_activity:
                chol = np.linalg.cholesky(sigma)
                logdet = 2.0 * float(np.log(np.diag(chol)).sum())
                loglik = _emission_core(E, z, theta, chol, logdet, K)
                filtered, _ = forward_filter(loglik, pin, P)
                x = backward_sample(filtered, P, rng).values
                x0 = x - 1
                P = _draw_transition(x0, K, priors, rng)
                pin = _draw_initial(int(x0[0]), K, priors, rng)
            xf = x.astype(float)
            theta = _draw_coefficients(E, z, xf, omega, priors, rng, latent_activity)
            omega, sigma = _draw_precision(E, z, xf, theta, priors, rng)
            if latent_activity and K == 2 and theta[2, 1] < 0:
                pin, P, theta, x = _relabel_arrays(pin, P, theta, x)
                relabel_count += 1
        except NumericalError as err:
            raise NumericalError(f"sweep {sweep + 1}: {err}") from err
        kept = sweep - config.burn_in
        if kept >= 0 and kept % config.thin == config.thin - 1:
            i = kept // config.thin
            out_pin[i] = pin
            out_P[i] = P
            out_theta[i] = theta
            out_sigma[i] = sigma
            out_omega[i] = omega
            out_paths[i] = x

    if not latent_activity:
        identification = "state row fixed at zero (reduced model)"
    elif K == 2:
        identification = "sign constraint: competitor state coefficient >= 0"
    else:
        identification = "none (K > 2 relabeling not implemented)"
    return PosteriorSamples(
        pin=out_pin, P=out_P, theta=out_theta, sigma=out_sigma, omega=out_omega,
        paths=out_paths, config=config, seed=int(config.seed),
        chain_index=0, relabel_count=relabel_count, identification=identification,
    )


def run_chains(residuals: ResidualPairs, z: np.ndarray, priors: PriorSpec,
               config: GibbsConfig, latent_activity: bool = True) -> list[PosteriorSamples]:
    """One PosteriorSamples per chain, each from an independent derived stream."""
    results = []
    for chain in range(config.num_chains):
        samples = run_chain(residuals, z, priors, config,
                            derive_stream(config.seed, chain), latent_activity)
        samples.chain_index = chain
        results.append(samples)
    return results


def draw_column_names(num_states: int) -> list[str]:
    names = [f"pin[{i + 1}]" for i in range(num_states)]
    names += [f"P[{i + 1},{j + 1}]" for i in range(num_states) for j in range(num_states)]
    names += list(COEF_NAMES)
    names += ["sigma[1,1]", "sigma[1,2]", "sigma[2,2]"]
    names += ["omega[1,1]", "omega[1,2]", "omega[2,2]"]
    return names


def write_draws_csv(samples: PosteriorSamples, path: str) -> None:
    """One row per retained draw, all scalar parameters."""
    K = samples.num_states
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["draw"] + draw_column_names(K))
        for i in range(samples.num_draws):
            row: list[object] = [i + 1]
            row += [repr(float(v)) for v in samples.pin[i]]
            row += [repr(float(v)) for v in samples.P[i].ravel()]
            row += [repr(float(v)) for v in samples.theta[i].T.ravel()]
            row += [repr(float(samples.sigma[i][a, b])) for a, b in ((0, 0), (0, 1), (1, 1))]
            row += [repr(float(samples.omega[i][a, b])) for a, b in ((0, 0), (0, 1), (1, 1))]
            writer.writerow(row)


def write_paths_csv(samples: PosteriorSamples, path: str) -> None:
    """One row per retained draw, integer state codes per period."""
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["draw"] + [f"x[{t + 1}]" for t in range(samples.num_periods)])
        for i in range(samples.num_draws):
            writer.writerow([i + 1] + [int(v) for v in samples.paths[i]])
