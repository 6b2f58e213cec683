"""Imputing a competitor's unobserved marketing activity from sales series.

Two-stage pipeline: OLS removes known covariate effects from log sales, then
a bivariate-Gaussian hidden Markov model on the residual pairs recovers a
latent activity state per period via Gibbs sampling.
"""

from .dataset import (ColumnSchema, SeriesTable, TransformedSeries,
                      VariableSummary, load_series_csv, summarize_variables,
                      transform_dataset, write_series_csv)
from .errors import (ConfigError, DataError, HiddenSpendError, NumericalError,
                     ValidationError)
from .gibbs import (GibbsConfig, PosteriorSamples, PriorSpec, derive_stream,
                    init_chain_state, relabel_draw, run_chain, run_chains,
                    sample_coefficients, sample_initial_dist,
                    sample_precision, sample_states, sample_transition_matrix,
                    write_draws_csv, write_paths_csv)
from .hmm import (HmmParams, StatePath, backward_sample,
                  emission_loglik_matrix, forward_filter, marginal_loglik,
                  smooth_marginals)
from .posterior import (ActivityProfile, BiasComparison, ClassificationScore,
                        SummaryRow, bias_comparison, chain_agreement,
                        classify_and_score, kde_export, rolling_refit,
                        state_activity_means, state_frequencies,
                        summarize_posterior)
from .stage1 import (RegressionSpec, ResidualPairs, Stage1Fit,
                     extract_residual_pairs, fit_ols)
from .synthetic import (GeneratorSpec, calibrate_state_effect,
                        conditional_density_grid, default_generator_spec,
                        exact_state_posterior, generate_dataset,
                        generator_spec_from_dict, oracle_accuracy)
from .validation import (CheckResult, check_dirichlet_moment,
                         check_ffbs_vs_enumeration, check_gaussian_moment,
                         check_relabel_invariance, check_wishart_moment,
                         run_validation_suite, suite_payload)

__version__ = "0.1.0"

__all__ = [
    "ActivityProfile", "BiasComparison", "CheckResult", "ClassificationScore",
    "ColumnSchema", "ConfigError", "DataError", "GeneratorSpec", "GibbsConfig",
    "HiddenSpendError", "HmmParams", "NumericalError", "PosteriorSamples",
    "PriorSpec", "RegressionSpec", "ResidualPairs", "SeriesTable",
    "Stage1Fit", "StatePath", "SummaryRow", "TransformedSeries",
    "ValidationError", "VariableSummary", "backward_sample",
    "bias_comparison", "calibrate_state_effect", "chain_agreement",
    "check_dirichlet_moment", "check_ffbs_vs_enumeration",
    "check_gaussian_moment", "check_relabel_invariance",
    "check_wishart_moment",
    "classify_and_score", "conditional_density_grid", "default_generator_spec",
    "derive_stream", "emission_loglik_matrix", "exact_state_posterior",
    "extract_residual_pairs", "fit_ols", "forward_filter", "generate_dataset",
    "generator_spec_from_dict", "init_chain_state", "kde_export",
    "load_series_csv", "marginal_loglik", "oracle_accuracy", "relabel_draw",
    "rolling_refit", "run_chain", "run_chains", "run_validation_suite",
    "sample_coefficients", "sample_initial_dist", "sample_precision",
    "sample_states", "sample_transition_matrix", "smooth_marginals",
    "state_activity_means", "state_frequencies", "suite_payload",
    "summarize_posterior", "summarize_variables", "transform_dataset",
    "write_draws_csv", "write_paths_csv", "write_series_csv",
]
