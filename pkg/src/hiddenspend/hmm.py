"""Latent-chain core: emission log-likelihoods, scaled forward filtering,
backward path sampling, smoothing, and the marginal log-likelihood.

The observation model is a bivariate Gaussian on the paired stage-1
residuals whose mean is linear in (1, z_t, x_t), where x_t is the hidden
state coded as its integer value 1..K.  Filtering runs in scaled space with
stored per-step normalizers, which is exact and avoids underflow on long
series; the normalizers sum to the marginal log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError
from .stage1 import ResidualPairs

LOG_2PI = float(np.log(2.0 * np.pi))
_SIMPLEX_TOL = 1e-8


@dataclass
class HmmParams:
    """Model parameters: initial distribution, transition matrix, emission
    coefficients (rows: intercept, z, state; columns: focal, competitor),
    error covariance and its inverse."""

    pin: np.ndarray
    P: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray

    def __post_init__(self) -> None:
        self.pin = np.asarray(self.pin, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        K = self.pin.shape[0]
        if K < 2:
            raise DataError(f"need at least 2 states, got {K}")
        if self.P.shape != (K, K):
            raise DataError(f"P has shape {self.P.shape}, expected ({K}, {K})")
        if self.theta.shape != (3, 2):
            raise DataError(f"theta has shape {self.theta.shape}, expected (3, 2)")
        for name, m in (("sigma", self.sigma), ("omega", self.omega)):
            if m.shape != (2, 2):
                raise DataError(f"{name} has shape {m.shape}, expected (2, 2)")
        if np.any(self.pin < 0) or abs(self.pin.sum() - 1.0) > 1e-12:
            raise DataError("pin is not a probability vector")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=1) - 1.0)) > 1e-12:
            raise DataError("P is not row stochastic")
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-12, rtol=0.0):
            raise DataError("sigma is not symmetric")
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise NumericalError("sigma is not positive definite") from None
        if np.max(np.abs(self.omega @ self.sigma - np.eye(2))) > 1e-8:
            raise DataError("omega is not the inverse of sigma")

    @classmethod
    def from_sigma(cls, pin, P, theta, sigma) -> "HmmParams":
        sigma = np.asarray(sigma, dtype=float)
        return cls(pin=pin, P=P, theta=theta, sigma=sigma, omega=np.linalg.inv(sigma))

    @property
    def num_states(self) -> int:
        return self.pin.shape[0]


@dataclass
class StatePath:
    """One latent trajectory; values are the integer state codes 1..K."""

    values: np.ndarray
    num_states: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 1:
            raise DataError("state path must be one-dimensional")
        if self.num_states < 1:
            raise DataError("num_states must be >= 1")
        if self.values.size and (self.values.min() < 1 or self.values.max() > self.num_states):
            raise DataError(f"state values outside 1..{self.num_states}")

    @property
    def num_periods(self) -> int:
        return self.values.shape[0]

    def activity(self) -> np.ndarray:
        """Activity indicator x - 1 (meaningful for K=2)."""
        return self.values - 1


def _emission_core(E: np.ndarray, z: np.ndarray, theta: np.ndarray,
                   chol: np.ndarray, logdet: float, num_states: int) -> np.ndarray:
    base = E - theta[0][None, :] - z[:, None] * theta[1][None, :]
    out = np.empty((E.shape[0], num_states))
    for k in range(1, num_states + 1):
        diff = base - k * theta[2][None, :]
        sol = scipy.linalg.solve_triangular(chol, diff.T, lower=True)
        out[:, k - 1] = -LOG_2PI - 0.5 * logdet - 0.5 * np.einsum("ij,ij->j", sol, sol)
    return out


def emission_loglik_matrix(residuals: ResidualPairs, z: np.ndarray,
                           params: HmmParams) -> np.ndarray:
    """T x K matrix: log density of (e1_t, e2_t) under state k."""
    z = np.asarray(z, dtype=float)
    if z.shape != (residuals.num_periods,):
        raise DataError(f"z has shape {z.shape}, expected ({residuals.num_periods},)")
    try:
        chol = np.linalg.cholesky(params.sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("sigma is not positive definite") from None
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return _emission_core(residuals.stacked(), z, params.theta, chol, logdet,
                          params.num_states)


@numba.njit(cache=True)
def _forward_kernel(scaled_lik, pin, P, filtered, log_norm):  # pragma: no cover
    T, K = scaled_lik.shape
    for t in range(T):
        norm = 0.0
        for k in range(K):
            if t == 0:
                pred = pin[k]
            else:
                pred = 0.0
                for j in range(K):
                    pred += filtered[t - 1, j] * P[j, k]
            v = pred * scaled_lik[t, k]
            filtered[t, k] = v
            norm += v
        if not (norm > 0.0 and np.isfinite(norm)):
            return t
        inv = 1.0 / norm
        for k in range(K):
            filtered[t, k] *= inv
        log_norm[t] = np.log(norm)
    return -1


@numba.njit(cache=True)
def _backward_kernel(filtered, P, u, path):  # pragma: no cover
    T, K = filtered.shape
    acc = 0.0
    pick = K - 1
    for k in range(K):
        acc += filtered[T - 1, k]
        if u[T - 1] < acc:
            pick = k
            break
    path[T - 1] = pick
    for t in range(T - 2, -1, -1):
        nxt = path[t + 1]
        norm = 0.0
        for k in range(K):
            norm += filtered[t, k] * P[k, nxt]
        r = u[t] * norm
        acc = 0.0
        pick = K - 1
        for k in range(K):
            acc += filtered[t, k] * P[k, nxt]
            if r < acc:
                pick = k
                break
        path[t] = pick


def _check_chain_inputs(loglik: np.ndarray, pin: np.ndarray, P: np.ndarray):
    loglik = np.ascontiguousarray(loglik, dtype=float)
    pin = np.ascontiguousarray(pin, dtype=float)
    P = np.ascontiguousarray(P, dtype=float)
    if loglik.ndim != 2 or loglik.shape[0] < 1:
        raise DataError(f"log-likelihood matrix has shape {loglik.shape}")
    K = loglik.shape[1]
    if pin.shape != (K,) or P.shape != (K, K):
        raise DataError(f"pin/P shapes {pin.shape}/{P.shape} do not match K={K}")
    if np.any(np.isnan(loglik)) or np.any(loglik == np.inf):
        raise DataError("log-likelihood matrix contains NaN or +inf")
    if np.any(pin < 0) or abs(pin.sum() - 1.0) > _SIMPLEX_TOL:
        raise DataError("pin is not a probability vector")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > _SIMPLEX_TOL:
        raise DataError("P is not row stochastic")
    return loglik, pin, P


def forward_filter(loglik: np.ndarray, pin: np.ndarray,
                   P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled forward recursion.

    Returns (filtered, log_norm): row t of ``filtered`` is the distribution
    of x_t given observations 1..t, and ``log_norm`` holds the per-step log
    normalizers, which sum to the marginal log-likelihood.
    """
    loglik, pin, P = _check_chain_inputs(loglik, pin, P)
    T = loglik.shape[0]
    shift = loglik.max(axis=1)
    if not np.all(np.isfinite(shift)):
        t = int(np.argmax(~np.isfinite(shift)))
        raise NumericalError(f"likelihood collapsed to zero at period {t + 1}")
    scaled = np.exp(loglik - shift[:, None])
    filtered = np.empty_like(scaled)
    log_norm = np.empty(T)
    bad = _forward_kernel(scaled, pin, P, filtered, log_norm)
    if bad >= 0:
        raise NumericalError(f"likelihood collapsed to zero at period {bad + 1}")
    return filtered, log_norm + shift


def backward_sample(filtered: np.ndarray, P: np.ndarray,
                    rng: np.random.Generator) -> StatePath:
    """Exact joint draw of the path given forward-filtered distributions."""
    filtered = np.ascontiguousarray(filtered, dtype=float)
    P = np.ascontiguousarray(P, dtype=float)
    T, K = filtered.shape
    u = rng.random(T)
    path = np.empty(T, dtype=np.int64)
    _backward_kernel(filtered, P, u, path)
    return StatePath(values=path + 1, num_states=K)


def marginal_loglik(loglik: np.ndarray, pin: np.ndarray, P: np.ndarray) -> float:
    """log of the total path-summed likelihood."""
    _, log_norm = forward_filter(loglik, pin, P)
    return float(log_norm.sum())


def smooth_marginals(loglik: np.ndarray, pin: np.ndarray, P: np.ndarray) -> np.ndarray:
    """T x K posterior state marginals given all observations."""
    loglik, pin, P = _check_chain_inputs(loglik, pin, P)
    filtered, _ = forward_filter(loglik, pin, P)
    T, K = loglik.shape
    scaled = np.exp(loglik - loglik.max(axis=1)[:, None])
    out = np.empty((T, K))
    out[T - 1] = filtered[T - 1]
    beta = np.ones(K)
    for t in range(T - 2, -1, -1):
        beta = P @ (scaled[t + 1] * beta)
        peak = beta.max()
        if not (peak > 0.0 and np.isfinite(peak)):
            raise NumericalError(f"smoothing collapsed at period {t + 1}")
        beta /= peak
        weights = filtered[t] * beta
        out[t] = weights / weights.sum()
    return out


def path_joint_loglik(loglik: np.ndarray, pin: np.ndarray, P: np.ndarray,
                      path: StatePath) -> float:
    """log p(path, observations) = chain log-probability + emission terms."""
    loglik, pin, P = _check_chain_inputs(loglik, pin, P)
    x = path.values - 1
    if x.shape[0] != loglik.shape[0]:
        raise DataError("path length does not match the likelihood matrix")
    with np.errstate(divide="ignore"):
        chain = np.log(pin[x[0]])
        if x.shape[0] > 1:
            chain += np.log(P[x[:-1], x[1:]]).sum()
    return float(chain + loglik[np.arange(x.shape[0]), x].sum())
