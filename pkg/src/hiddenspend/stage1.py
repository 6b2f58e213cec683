"""First-stage covariate removal: plain OLS per product, residual extraction.

The focal and competitor log-sales series are each regressed on their own
covariate set (seasonality plus promotion indicators for the focal product,
a market index for the competitor).  The paired residuals are what the
latent-state model consumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats

from ._fileio import atomic_open
from .dataset import TransformedSeries
from .errors import ConfigError, DataError

INTERCEPT = "intercept"


@dataclass(frozen=True)
class RegressionSpec:
    """Response plus ordered predictors; an intercept is always included."""

    response: str
    predictors: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.response not in ("y1", "y2"):
            raise ConfigError(f"response must be 'y1' or 'y2', got {self.response!r}")
        if not self.predictors:
            raise ConfigError("predictor list is empty")
        if len(set(self.predictors)) != len(self.predictors):
            raise ConfigError("duplicate predictor names")
        if self.response in self.predictors:
            raise ConfigError("response cannot be one of its own predictors")


@dataclass
class Stage1Fit:
    """OLS fit of one response: coefficients, inference, residuals."""

    response: str
    terms: tuple[str, ...]
    coefficients: np.ndarray
    standardized_coefficients: np.ndarray  # per non-intercept predictor
    p_values: np.ndarray
    r_square: float
    residuals: np.ndarray

    @property
    def num_obs(self) -> int:
        return self.residuals.shape[0]

    def coefficient(self, term: str) -> float:
        try:
            return float(self.coefficients[self.terms.index(term)])
        except ValueError:
            raise ConfigError(f"no term named {term!r} in fit of {self.response}") from None


def _design_matrix(data: TransformedSeries, spec: RegressionSpec) -> tuple[np.ndarray, np.ndarray]:
    y = data.y1 if spec.response == "y1" else data.y2
    columns = [np.ones(data.num_periods)]
    for name in spec.predictors:
        if name == "z":
            columns.append(data.z)
        elif name in data.covariates:
            columns.append(data.covariates[name])
        else:
            raise ConfigError(f"unknown predictor column {name!r}")
    return np.column_stack(columns), y


def fit_ols(data: TransformedSeries, spec: RegressionSpec) -> Stage1Fit:
    """Least squares via QR, two-sided t-test p-values with T - p df."""
    X, y = _design_matrix(data, spec)
    T, p = X.shape
    if T <= p:
        raise DataError(f"{T} observations cannot identify {p} coefficients")

    # Pivoted QR exposes which columns are redundant when rank < p.
    _, R_piv, pivots = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R_piv))
    rank = int(np.sum(diag > diag.max() * max(T, p) * np.finfo(float).eps))
    if rank < p:
        names = (INTERCEPT,) + spec.predictors
        collinear = sorted(names[j] for j in pivots[rank:])
        raise DataError(f"design matrix is rank deficient; collinear column(s): {', '.join(collinear)}")

    Q, R = np.linalg.qr(X)
    coef = scipy.linalg.solve_triangular(R, Q.T @ y)
    residuals = y - X @ coef

    sse = float(residuals @ residuals)
    centered = y - y.mean()
    sst = float(centered @ centered)
    if sst == 0.0:
        raise DataError("response is constant; r_square undefined")
    r_square = 1.0 - sse / sst

    r_inv = scipy.linalg.solve_triangular(R, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    dof = T - p
    sigma2 = sse / dof
    se = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(se > 0, coef / np.where(se > 0, se, 1.0), np.inf * np.sign(coef))
    p_values = 2.0 * stats.t.sf(np.abs(t_stats), dof)

    sd_y = float(np.std(y, ddof=1))
    standardized = np.array(
        [coef[1 + j] * float(np.std(X[:, 1 + j], ddof=1)) / sd_y for j in range(p - 1)]
    )

    return Stage1Fit(
        response=spec.response,
        terms=(INTERCEPT,) + spec.predictors,
        coefficients=coef,
        standardized_coefficients=standardized,
        p_values=p_values,
        r_square=r_square,
        residuals=residuals,
    )


@dataclass
class ResidualPairs:
    """Paired per-period residuals: e1 focal, e2 competitor."""

    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self) -> None:
        self.e1 = np.asarray(self.e1, dtype=float)
        self.e2 = np.asarray(self.e2, dtype=float)
        if self.e1.shape != self.e2.shape or self.e1.ndim != 1:
            raise DataError(
                f"residual series differ in shape: {self.e1.shape} vs {self.e2.shape}"
            )
        if not (np.all(np.isfinite(self.e1)) and np.all(np.isfinite(self.e2))):
            raise DataError("residual series contain non-finite values")

    @property
    def num_periods(self) -> int:
        return self.e1.shape[0]

    def stacked(self) -> np.ndarray:
        """T x 2 array, focal column first."""
        return np.column_stack([self.e1, self.e2])


def extract_residual_pairs(fit_a: Stage1Fit, fit_b: Stage1Fit) -> ResidualPairs:
    if fit_a.num_obs != fit_b.num_obs:
        raise DataError(
            f"fits cover different spans: {fit_a.num_obs} vs {fit_b.num_obs} periods"
        )
    return ResidualPairs(e1=fit_a.residuals.copy(), e2=fit_b.residuals.copy())


def write_fit_report(fit: Stage1Fit, path: str) -> None:
    """CSV rows term,coefficient,standardized,p_value plus a final r_square row."""
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["term", "coefficient", "standardized", "p_value"])
        for i, term in enumerate(fit.terms):
            standardized = "" if i == 0 else repr(float(fit.standardized_coefficients[i - 1]))
            writer.writerow([term, repr(float(fit.coefficients[i])), standardized,
                             repr(float(fit.p_values[i]))])
        writer.writerow(["r_square", repr(float(fit.r_square)), "", ""])
