"""Posterior reporting: summary tables, kernel densities, activity profiles,
classification scoring, the bias comparison, and rolling re-fits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from ._fileio import atomic_open
from .dataset import TransformedSeries
from .errors import ConfigError, DataError
from .gibbs import (COEF_NAMES, GibbsConfig, PosteriorSamples, PriorSpec,
                    derive_stream, run_chain)
from .stage1 import RegressionSpec, ResidualPairs, extract_residual_pairs, fit_ols

_NODE_PATTERN = re.compile(
    r"^(?:pin\[(\d+)\]|P\[(\d+),(\d+)\]|(sigma|omega)\[(\d+),(\d+)\]|beta([012])([ab]))$"
)


@dataclass(frozen=True)
class SummaryRow:
    node: str
    mean: float
    sd: float
    q2_5: float
    median: float
    q97_5: float
    significant_nonzero: bool

    def __post_init__(self) -> None:
        if not (self.q2_5 <= self.median <= self.q97_5):
            raise DataError(f"quantiles out of order for node {self.node}")
        if self.sd < 0:
            raise DataError(f"negative sd for node {self.node}")


def default_nodes(num_states: int) -> list[str]:
    nodes = [f"pin[{i + 1}]" for i in range(num_states)]
    nodes += [f"P[{i + 1},{j + 1}]" for i in range(num_states) for j in range(num_states)]
    nodes += list(COEF_NAMES)
    nodes += ["sigma[1,1]", "sigma[1,2]", "sigma[2,1]", "sigma[2,2]"]
    return nodes


def node_values(samples: PosteriorSamples, node: str) -> np.ndarray:
    """Draw vector for one named scalar parameter, e.g. P[1,2] or beta1a."""
    match = _NODE_PATTERN.match(node)
    if match is None:
        raise ConfigError(f"unknown node name {node!r}")
    K = samples.num_states
    if match.group(1) is not None:
        i = int(match.group(1))
        if not 1 <= i <= K:
            raise ConfigError(f"node {node!r}: index outside 1..{K}")
        return samples.pin[:, i - 1]
    if match.group(2) is not None:
        i, j = int(match.group(2)), int(match.group(3))
        if not (1 <= i <= K and 1 <= j <= K):
            raise ConfigError(f"node {node!r}: index outside 1..{K}")
        return samples.P[:, i - 1, j - 1]
    if match.group(4) is not None:
        source = samples.sigma if match.group(4) == "sigma" else samples.omega
        i, j = int(match.group(5)), int(match.group(6))
        if not (1 <= i <= 2 and 1 <= j <= 2):
            raise ConfigError(f"node {node!r}: index outside 1..2")
        return source[:, i - 1, j - 1]
    row = int(match.group(7))
    col = 0 if match.group(8) == "a" else 1
    return samples.theta[:, row, col]


def _summary_from_draws(node: str, draws: np.ndarray) -> SummaryRow:
    if draws.size < 2:
        raise DataError(f"node {node}: need at least 2 draws")
    q2_5, median, q97_5 = np.quantile(draws, [0.025, 0.5, 0.975])
    return SummaryRow(
        node=node,
        mean=float(np.mean(draws)),
        sd=float(np.std(draws, ddof=1)),
        q2_5=float(q2_5),
        median=float(median),
        q97_5=float(q97_5),
        significant_nonzero=bool(q2_5 > 0 or q97_5 < 0),
    )


def summarize_posterior(samples: PosteriorSamples,
                        nodes: list[str] | None = None) -> list[SummaryRow]:
    """Mean, sample sd, and interpolated 2.5/50/97.5% quantiles per node."""
    if samples.num_draws < 2:
        raise DataError("need at least 2 retained draws to summarize")
    selected = default_nodes(samples.num_states) if nodes is None else list(nodes)
    return [_summary_from_draws(node, node_values(samples, node)) for node in selected]


def write_summary_csv(rows: list[SummaryRow], path: str) -> None:
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["node", "mean", "sd", "q2_5", "median", "q97_5", "significant"])
        for r in rows:
            writer.writerow([r.node, repr(r.mean), repr(r.sd), repr(r.q2_5),
                             repr(r.median), repr(r.q97_5),
                             "true" if r.significant_nonzero else "false"])


def kde_export(draws: np.ndarray, grid_points: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel density on an even grid spanning the data ± 3 bandwidths.

    Bandwidth is Silverman's rule 0.9·min(sd, IQR/1.34)·n^(-1/5); when the
    IQR is zero the sd alone is used.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 1 or draws.size < 2:
        raise DataError("need at least 2 draws for a density")
    if grid_points < 2:
        raise ConfigError("grid_points must be >= 2")
    if np.all(draws == draws[0]):
        raise DataError("degenerate sample: all draws identical")
    sd = float(np.std(draws, ddof=1))
    q75, q25 = np.percentile(draws, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    bw = 0.9 * spread * draws.size ** (-1.0 / 5.0)
    grid = np.linspace(draws.min() - 3 * bw, draws.max() + 3 * bw, grid_points)
    u = (grid[:, None] - draws[None, :]) / bw
    density = np.exp(-0.5 * u * u).sum(axis=1) / (draws.size * bw * math.sqrt(2 * math.pi))
    return grid, density


def write_density_csv(grid: np.ndarray, density: np.ndarray, path: str) -> None:
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["grid", "density"])
        for g, d in zip(grid, density):
            writer.writerow([repr(float(g)), repr(float(d))])


@dataclass
class ActivityProfile:
    """Per-period posterior probability that the competitor was active."""

    prob_active: np.ndarray

    def __post_init__(self) -> None:
        self.prob_active = np.asarray(self.prob_active, dtype=float)
        if self.prob_active.ndim != 1:
            raise DataError("activity profile must be one-dimensional")
        if np.any(self.prob_active < 0) or np.any(self.prob_active > 1):
            raise DataError("activity probabilities outside [0, 1]")

    @property
    def num_periods(self) -> int:
        return self.prob_active.shape[0]


def state_frequencies(samples: PosteriorSamples) -> np.ndarray:
    """T x K matrix of posterior state frequencies over retained draws."""
    K = samples.num_states
    labels = np.arange(1, K + 1, dtype=samples.paths.dtype)
    return (samples.paths[:, :, None] == labels[None, None, :]).mean(axis=0)


def state_activity_means(samples: PosteriorSamples) -> ActivityProfile:
    """Fraction of draws in the active state (x = 2) per period; K=2 only."""
    if samples.num_states != 2:
        raise ConfigError(
            "activity profile is defined for 2-state models; use "
            "state_frequencies for per-state reporting with more states")
    return ActivityProfile(prob_active=state_frequencies(samples)[:, 1])


def write_activity_csv(profile: ActivityProfile, path: str,
                       period_index: np.ndarray | None = None,
                       actual_spend: np.ndarray | None = None) -> None:
    periods = (np.arange(1, profile.num_periods + 1)
               if period_index is None else np.asarray(period_index))
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["period", "prob_active", "actual_active"])
        for t in range(profile.num_periods):
            actual = "" if actual_spend is None else int(actual_spend[t] > 0)
            writer.writerow([int(periods[t]), repr(float(profile.prob_active[t])), actual])


@dataclass(frozen=True)
class ClassificationScore:
    cutoff: float
    presence_correct: int
    presence_total: int
    absence_correct: int
    absence_total: int

    def __post_init__(self) -> None:
        for name in ("presence_correct", "presence_total", "absence_correct", "absence_total"):
            if getattr(self, name) < 0:
                raise DataError(f"negative count {name}")
        if self.presence_correct > self.presence_total or self.absence_correct > self.absence_total:
            raise DataError("correct counts exceed totals")

    @property
    def overall_correct(self) -> int:
        return self.presence_correct + self.absence_correct

    @property
    def overall_total(self) -> int:
        return self.presence_total + self.absence_total

    @staticmethod
    def _rate(correct: int, total: int) -> float:
        return correct / total if total else float("nan")

    @property
    def presence_rate(self) -> float:
        return self._rate(self.presence_correct, self.presence_total)

    @property
    def absence_rate(self) -> float:
        return self._rate(self.absence_correct, self.absence_total)

    @property
    def overall_rate(self) -> float:
        return self._rate(self.overall_correct, self.overall_total)

    def to_dict(self) -> dict:
        def clean(rate: float) -> float | None:
            return None if math.isnan(rate) else rate
        return {
            "cutoff": self.cutoff,
            "presence_correct": self.presence_correct,
            "presence_total": self.presence_total,
            "presence_rate": clean(self.presence_rate),
            "absence_correct": self.absence_correct,
            "absence_total": self.absence_total,
            "absence_rate": clean(self.absence_rate),
            "overall_correct": self.overall_correct,
            "overall_total": self.overall_total,
            "overall_rate": clean(self.overall_rate),
        }


def classify_and_score(profile: ActivityProfile, actual_spend: np.ndarray,
                       cutoff: float = 0.5) -> ClassificationScore:
    """Score cutoff-rule predictions against actual activity (spend > 0).

    Ties at the cutoff count as active.
    """
    actual_spend = np.asarray(actual_spend, dtype=float)
    if actual_spend.shape != profile.prob_active.shape:
        raise DataError(
            f"actual spend has shape {actual_spend.shape}, profile has "
            f"{profile.prob_active.shape}")
    predicted = profile.prob_active >= cutoff
    actual = actual_spend > 0
    return ClassificationScore(
        cutoff=float(cutoff),
        presence_correct=int(np.sum(predicted & actual)),
        presence_total=int(np.sum(actual)),
        absence_correct=int(np.sum(~predicted & ~actual)),
        absence_total=int(np.sum(~actual)),
    )


def write_classification_csv(score: ClassificationScore, path: str) -> None:
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", "correct", "total", "rate"])
        for name, correct, total, rate in (
            ("presence", score.presence_correct, score.presence_total, score.presence_rate),
            ("absence", score.absence_correct, score.absence_total, score.absence_rate),
            ("overall", score.overall_correct, score.overall_total, score.overall_rate),
        ):
            writer.writerow([name, correct, total, "" if math.isnan(rate) else repr(rate)])


def mc_standard_error(draws: np.ndarray) -> float:
    """Autocorrelation-robust MC standard error of the mean via batch means."""
    draws = np.asarray(draws, dtype=float)
    n = draws.size
    if n < 2:
        raise DataError("need at least 2 draws for a standard error")
    batch = int(math.floor(math.sqrt(n)))
    count = n // batch
    if count < 2:
        return float(np.std(draws, ddof=1) / math.sqrt(n))
    means = draws[: count * batch].reshape(count, batch).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(count))


def config_fingerprint(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BiasComparison:
    """Focal spend coefficient with and without the latent activity term."""

    beta1c_with: float
    beta1c_without: float
    difference: float
    se_with: float
    se_without: float
    config_fingerprint: str

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_with, self.se_without)

    def to_dict(self) -> dict:
        return {
            "beta1c_with": self.beta1c_with,
            "beta1c_without": self.beta1c_without,
            "difference": self.difference,
            "mc_se_with": self.se_with,
            "mc_se_without": self.se_without,
            "config_fingerprint": self.config_fingerprint,
        }


def bias_comparison(residuals: ResidualPairs, z: np.ndarray, priors: PriorSpec,
                    config: GibbsConfig) -> BiasComparison:
    """Posterior mean of the focal z-coefficient from the full model versus a
    reduced run with the state row of Θ fixed at zero, same seed derivation."""
    full = run_chain(residuals, z, priors, config, derive_stream(config.seed, 0))
    reduced = run_chain(residuals, z, priors, config, derive_stream(config.seed, 0),
                        latent_activity=False)
    with_draws = full.theta[:, 1, 0]
    without_draws = reduced.theta[:, 1, 0]
    mean_with = float(np.mean(with_draws))
    mean_without = float(np.mean(without_draws))
    return BiasComparison(
        beta1c_with=mean_with,
        beta1c_without=mean_without,
        difference=mean_with - mean_without,
        se_with=mc_standard_error(with_draws),
        se_without=mc_standard_error(without_draws),
        config_fingerprint=config_fingerprint(
            {"priors": priors.to_dict(), "gibbs": config.to_dict()}),
    )


@dataclass
class RollingEntry:
    period: int
    beta1c_with: float
    summary: list[SummaryRow]


def rolling_refit(data: TransformedSeries, focal_spec: RegressionSpec,
                  competitor_spec: RegressionSpec, priors: PriorSpec,
                  config: GibbsConfig, start_period: int, step: int,
                  window: int | None = None) -> list[RollingEntry]:
    """Re-fit the full pipeline on expanding windows 1..t for t = start_period,
    start_period+step, ...; ``window`` switches to fixed-width windows."""
    T = data.num_periods
    if step < 1:
        raise ConfigError("step must be >= 1")
    min_fit = max(len(focal_spec.predictors), len(competitor_spec.predictors)) + 2
    if start_period < min_fit:
        raise ConfigError(f"window too small: start_period {start_period} < {min_fit}")
    if start_period > T:
        raise ConfigError(f"start_period {start_period} beyond the {T} available periods")
    if window is not None and window < min_fit:
        raise ConfigError(f"window too small: fixed width {window} < {min_fit}")

    entries = []
    for t in range(start_period, T + 1, step):
        sliced = data.head(t) if window is None else data.span(max(1, t - window + 1), t)
        fit_a = fit_ols(sliced, focal_spec)
        fit_b = fit_ols(sliced, competitor_spec)
        pairs = extract_residual_pairs(fit_a, fit_b)
        samples = run_chain(pairs, sliced.z, priors, config, derive_stream(config.seed, 0))
        entries.append(RollingEntry(
            period=int(sliced.period_index[-1]),
            beta1c_with=float(np.mean(samples.theta[:, 1, 0])),
            summary=summarize_posterior(samples),
        ))
    return entries


def write_rolling_csv(entries: list[RollingEntry], path: str) -> None:
    """Long format: one row per (window end period, node)."""
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["period", "node", "mean", "sd", "q2_5", "median",
                         "q97_5", "significant"])
        for entry in entries:
            for r in entry.summary:
                writer.writerow([entry.period, r.node, repr(r.mean), repr(r.sd),
                                 repr(r.q2_5), repr(r.median), repr(r.q97_5),
                                 "true" if r.significant_nonzero else "false"])


def chain_agreement(chains: list[PosteriorSamples]) -> dict:
    """Cross-chain diagnostic: per transition entry, the spread of posterior
    means against 4x the largest per-chain MC standard error."""
    if len(chains) < 2:
        raise ConfigError("need at least 2 chains to compare")
    K = chains[0].num_states
    entries = []
    all_ok = True
    for i in range(K):
        for j in range(K):
            node = f"P[{i + 1},{j + 1}]"
            means = [float(np.mean(c.P[:, i, j])) for c in chains]
            ses = [mc_standard_error(c.P[:, i, j]) for c in chains]
            diff = max(means) - min(means)
            threshold = 4.0 * max(ses)
            ok = bool(diff < threshold)
            all_ok = all_ok and ok
            entries.append({"node": node, "means": means, "max_abs_diff": diff,
                            "mc_se": max(ses), "threshold": threshold, "ok": ok})
    return {"entries": entries, "ok": all_ok}
