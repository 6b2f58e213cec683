"""Command-line front end: impute, simulate, validate, report.

All commands are driven by JSON configuration and write their outputs
atomically; rerunning with the same inputs and seed reproduces every file
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from ._fileio import atomic_open, write_json
from .dataset import (ColumnSchema, load_series_csv, summarize_variables,
                      transform_dataset, write_series_csv, write_variables_csv)
from .errors import (ConfigError, DataError, HiddenSpendError, NumericalError,
                     ValidationError)
from .gibbs import (GibbsConfig, PosteriorSamples, PriorSpec, run_chains,
                    write_draws_csv, write_paths_csv)
from .posterior import (bias_comparison, chain_agreement, classify_and_score,
                        config_fingerprint, kde_export, node_values,
                        rolling_refit, state_activity_means, state_frequencies,
                        summarize_posterior, write_activity_csv,
                        write_classification_csv, write_density_csv,
                        write_rolling_csv, write_summary_csv)
from .stage1 import (RegressionSpec, Stage1Fit, extract_residual_pairs,
                     fit_ols, write_fit_report)
from .synthetic import generate_dataset, generator_spec_from_dict, table_schema
from .validation import run_validation_suite, suite_payload

ENV_OUTPUT_DIR = "HIDDENSPEND_OUTPUT_DIR"

DEFAULT_FOCAL_PREDICTORS = ("seasonality", "gift")
DEFAULT_COMPETITOR_PREDICTORS = ("market_index",)
DEFAULT_DENSITY_NODES = ("P[1,1]", "P[1,2]", "P[2,1]", "P[2,2]",
                         "sigma[1,1]", "sigma[1,2]", "sigma[2,2]")

_KNOWN_KEYS = {"data", "columns", "stage1", "role_swap", "priors", "gibbs",
               "cutoff", "output_dir", "bias_comparison", "density_nodes",
               "export_draws", "export_paths", "rolling"}


@dataclass
class RunConfig:
    """Resolved impute-run configuration."""

    data_path: str
    schema: ColumnSchema
    focal_spec: RegressionSpec
    competitor_spec: RegressionSpec
    priors: PriorSpec
    gibbs: GibbsConfig
    cutoff: float = 0.5
    role_swap: bool = False
    output_dir: str | None = None
    bias: bool = False
    density_nodes: tuple[str, ...] = DEFAULT_DENSITY_NODES
    export_draws: bool = False
    export_paths: bool = False
    rolling: dict | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.cutoff <= 1.0:
            raise ConfigError(f"cutoff {self.cutoff} outside [0, 1]")
        known = set(self.schema.covariates) | {"z"}
        for spec in (self.focal_spec, self.competitor_spec):
            missing = [p for p in spec.predictors if p not in known]
            if missing:
                raise ConfigError(
                    f"stage-1 predictors not in the column mapping: {', '.join(missing)}")
        if self.rolling is not None:
            if "start" not in self.rolling:
                raise ConfigError("rolling config needs a 'start' period")
            unknown = set(self.rolling) - {"start", "step", "window"}
            if unknown:
                raise ConfigError(f"rolling config has unknown keys: {sorted(unknown)}")

    @classmethod
    def from_file(cls, path: str, seed_override: int | None = None) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                raw = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw, seed_override=seed_override,
                             base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, raw: dict, seed_override: int | None = None,
                  base_dir: str = ".") -> "RunConfig":
        unknown = sorted(set(raw) - _KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("data", "columns"):
            if key not in raw:
                raise ConfigError(f"config is missing required key '{key}'")

        schema = ColumnSchema.from_dict(raw["columns"])
        stage1 = raw.get("stage1", {})
        if not isinstance(stage1, dict):
            raise ConfigError("'stage1' must be an object")
        unknown = sorted(set(stage1) - {"focal_predictors", "competitor_predictors"})
        if unknown:
            raise ConfigError(f"unknown stage1 keys: {', '.join(unknown)}")
        focal_predictors = tuple(stage1.get("focal_predictors", DEFAULT_FOCAL_PREDICTORS))
        competitor_predictors = tuple(
            stage1.get("competitor_predictors", DEFAULT_COMPETITOR_PREDICTORS))

        role_swap = bool(raw.get("role_swap", False))
        if role_swap:
            # The focal role moves to the other product: sales/spend columns
            # and the per-product predictor lists swap together.
            schema = schema.swapped()
            focal_predictors, competitor_predictors = (competitor_predictors,
                                                       focal_predictors)

        priors_raw = dict(raw.get("priors", {}))
        unknown = sorted(set(priors_raw) -
                         {"coef_variance", "wishart_df", "wishart_scale", "mix"})
        if unknown:
            raise ConfigError(f"unknown prior keys: {', '.join(unknown)}")
        gibbs_raw = dict(raw.get("gibbs", {}))
        unknown = sorted(set(gibbs_raw) -
                         {"seed", "burn_in", "kept_draws", "thin", "num_chains", "num_states"})
        if unknown:
            raise ConfigError(f"unknown gibbs keys: {', '.join(unknown)}")
        if seed_override is not None:
            gibbs_raw["seed"] = seed_override
        if "seed" not in gibbs_raw:
            raise ConfigError("a seed is required: set gibbs.seed or pass --seed")
        num_states = int(gibbs_raw.get("num_states", 2))
        if "mix" not in priors_raw:
            priors_raw["mix"] = [1.0] * num_states

        data_path = str(raw["data"])
        if not os.path.isabs(data_path):
            data_path = os.path.join(base_dir, data_path)

        rolling = raw.get("rolling")
        if rolling is not None:
            rolling = dict(rolling)

        return cls(
            data_path=data_path,
            schema=schema,
            focal_spec=RegressionSpec(response="y1", predictors=focal_predictors),
            competitor_spec=RegressionSpec(response="y2", predictors=competitor_predictors),
            priors=PriorSpec(**priors_raw),
            gibbs=GibbsConfig(**{k: int(v) for k, v in gibbs_raw.items()}),
            cutoff=float(raw.get("cutoff", 0.5)),
            role_swap=role_swap,
            output_dir=raw.get("output_dir"),
            bias=bool(raw.get("bias_comparison", False)),
            density_nodes=tuple(raw.get("density_nodes", DEFAULT_DENSITY_NODES)),
            export_draws=bool(raw.get("export_draws", False)),
            export_paths=bool(raw.get("export_paths", False)),
            rolling=rolling,
        )

    def resolved(self) -> dict:
        """Full configuration as written into report.json."""
        return {
            "data": self.data_path,
            "columns": {
                "date": self.schema.date,
                "focal_sales": self.schema.focal_sales,
                "competitor_sales": self.schema.competitor_sales,
                "focal_spend": self.schema.focal_spend,
                "competitor_spend": self.schema.competitor_spend,
                "covariates": dict(self.schema.covariates),
                "indicators": list(self.schema.indicators),
            },
            "stage1": {
                "focal_predictors": list(self.focal_spec.predictors),
                "competitor_predictors": list(self.competitor_spec.predictors),
            },
            "role_swap": self.role_swap,
            "priors": self.priors.to_dict(),
            "gibbs": self.gibbs.to_dict(),
            "cutoff": self.cutoff,
            "output_dir": self.output_dir,
            "bias_comparison": self.bias,
            "density_nodes": list(self.density_nodes),
            "export_draws": self.export_draws,
            "export_paths": self.export_paths,
            "rolling": self.rolling,
        }


def resolve_output_dir(configured: str | None) -> str:
    return configured or os.environ.get(ENV_OUTPUT_DIR) or os.getcwd()


def _fit_payload(fit: Stage1Fit) -> dict:
    terms = []
    for i, term in enumerate(fit.terms):
        terms.append({
            "term": term,
            "coefficient": float(fit.coefficients[i]),
            "standardized": None if i == 0 else float(fit.standardized_coefficients[i - 1]),
            "p_value": float(fit.p_values[i]),
        })
    return {"response": fit.response, "r_square": fit.r_square, "terms": terms}


def _density_filename(node: str) -> str:
    return f"density_{node}.csv"


def cmd_impute(config_path: str, seed_override: int | None = None) -> int:
    config = RunConfig.from_file(config_path, seed_override)
    out_dir = resolve_output_dir(config.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    outputs: list[str] = []

    def out(name: str) -> str:
        outputs.append(name)
        return os.path.join(out_dir, name)

    table = load_series_csv(config.data_path, config.schema)
    transformed = transform_dataset(table)
    write_variables_csv(summarize_variables(table), out("variables_summary.csv"))

    fit_focal = fit_ols(transformed, config.focal_spec)
    fit_competitor = fit_ols(transformed, config.competitor_spec)
    write_fit_report(fit_focal, out("stage1_focal.csv"))
    write_fit_report(fit_competitor, out("stage1_competitor.csv"))
    pairs = extract_residual_pairs(fit_focal, fit_competitor)

    chains = run_chains(pairs, transformed.z, config.priors, config.gibbs)
    samples = chains[0]
    agreement = chain_agreement(chains) if len(chains) > 1 else None

    summary_rows = summarize_posterior(samples)
    write_summary_csv(summary_rows, out("posterior_summary.csv"))

    for node in config.density_nodes:
        grid, density = kde_export(node_values(samples, node))
        write_density_csv(grid, density, out(_density_filename(node)))

    classification = None
    if samples.num_states == 2:
        profile = state_activity_means(samples)
        write_activity_csv(profile, out("activity_profile.csv"),
                           period_index=table.period_index,
                           actual_spend=table.spend_b_actual)
        if table.spend_b_actual is not None:
            classification = classify_and_score(profile, table.spend_b_actual,
                                                config.cutoff)
            write_classification_csv(classification, out("classification.csv"))
    else:
        _write_frequencies_csv(samples, out("state_frequencies.csv"),
                               table.period_index)

    bias = None
    if config.bias:
        bias = bias_comparison(pairs, transformed.z, config.priors, config.gibbs)
        write_json(out("bias.json"), bias.to_dict())

    if config.export_draws:
        write_draws_csv(samples, out("draws.csv"))
    if config.export_paths:
        write_paths_csv(samples, out("paths.csv"))

    if config.rolling is not None:
        entries = rolling_refit(
            transformed, config.focal_spec, config.competitor_spec,
            config.priors, config.gibbs,
            start_period=int(config.rolling["start"]),
            step=int(config.rolling.get("step", 1)),
            window=(int(config.rolling["window"])
                    if config.rolling.get("window") is not None else None),
        )
        write_rolling_csv(entries, out("rolling.csv"))

    resolved = config.resolved()
    report = {
        "command": "impute",
        "config": resolved,
        "config_fingerprint": config_fingerprint(resolved),
        "seed": int(config.gibbs.seed),
        "num_periods": table.num_periods,
        "stage1": {"focal": _fit_payload(fit_focal),
                   "competitor": _fit_payload(fit_competitor)},
        "gibbs": {
            "relabel_count": samples.relabel_count,
            "identification": samples.identification,
            "num_chains": config.gibbs.num_chains,
        },
        "classification": None if classification is None else classification.to_dict(),
        "overall_accuracy": None if classification is None else classification.overall_rate,
        "bias": None if bias is None else bias.to_dict(),
        "chain_agreement": agreement,
        "outputs": sorted(outputs + ["report.json"]),
    }
    write_json(os.path.join(out_dir, "report.json"), report)
    return 0


def _write_frequencies_csv(samples: PosteriorSamples, path: str,
                           period_index: np.ndarray) -> None:
    freqs = state_frequencies(samples)
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["period"] + [f"prob_state_{k + 1}" for k in range(samples.num_states)])
        for t in range(freqs.shape[0]):
            writer.writerow([int(period_index[t])] + [repr(float(v)) for v in freqs[t]])


def cmd_simulate(params_path: str | None, seed: int | None, out_dir: str) -> int:
    raw: dict = {}
    if params_path is not None:
        try:
            with open(params_path, encoding="utf-8") as handle:
                raw = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"params file not found: {params_path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"params file is not valid JSON: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("params root must be a JSON object")
    spec = generator_spec_from_dict(raw, seed_override=seed)
    data = generate_dataset(spec)

    os.makedirs(out_dir, exist_ok=True)
    if data.table is not None:
        write_series_csv(data.table, os.path.join(out_dir, "dataset.csv"),
                         table_schema(data.table))
    else:
        _write_residuals_csv(data.residuals, spec.z,
                             os.path.join(out_dir, "residuals.csv"))
    truth = spec.truth_dict()
    truth["state_path"] = data.path.values.tolist()
    truth["activity"] = (data.path.values - 1).tolist()
    write_json(os.path.join(out_dir, "truth.json"), truth)
    return 0


def _write_residuals_csv(residuals, z: np.ndarray, path: str) -> None:
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["period", "e1", "e2", "z"])
        for t in range(residuals.num_periods):
            writer.writerow([t + 1, repr(float(residuals.e1[t])),
                             repr(float(residuals.e2[t])), repr(float(z[t]))])


def cmd_validate(out_dir: str | None = None) -> int:
    results = run_validation_suite()
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.observed} (tolerance: {r.tolerance})")
    payload = suite_payload(results)
    target = resolve_output_dir(out_dir)
    os.makedirs(target, exist_ok=True)
    write_json(os.path.join(target, "validation.json"), payload)
    if not payload["all_passed"]:
        failed = [r.name for r in results if not r.passed]
        print(f"validation failed: {', '.join(failed)}", file=sys.stderr)
        return 5
    return 0


def _read_draws_csv(path: str) -> tuple[dict[str, np.ndarray], int]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no data rows")
        rows = [row for row in reader]
    if not rows:
        raise DataError(f"{path}: no data rows")
    matrix = np.array(rows, dtype=float)
    columns = {name: matrix[:, i] for i, name in enumerate(header)}
    num_states = sum(1 for name in header if name.startswith("pin["))
    if num_states < 2:
        raise DataError(f"{path}: no pin[...] columns; not a draws export")
    return columns, num_states


def cmd_report(from_dir: str, out_dir: str | None = None) -> int:
    """Re-render summary tables from a stored draws export."""
    draws_path = os.path.join(from_dir, "draws.csv")
    if not os.path.exists(draws_path):
        raise DataError(
            f"{from_dir} has no draws.csv; run impute with export_draws enabled")
    columns, K = _read_draws_csv(draws_path)
    n = columns["draw"].shape[0]

    pin = np.column_stack([columns[f"pin[{i + 1}]"] for i in range(K)])
    P = np.stack([np.column_stack([columns[f"P[{i + 1},{j + 1}]"] for j in range(K)])
                  for i in range(K)], axis=1)
    theta = np.empty((n, 3, 2))
    for row in range(3):
        for col, label in ((0, "a"), (1, "b")):
            theta[:, row, col] = columns[f"beta{row}{label}"]
    sigma = np.empty((n, 2, 2))
    omega = np.empty((n, 2, 2))
    for source, name in ((sigma, "sigma"), (omega, "omega")):
        source[:, 0, 0] = columns[f"{name}[1,1]"]
        source[:, 0, 1] = columns[f"{name}[1,2]"]
        source[:, 1, 0] = columns[f"{name}[1,2]"]
        source[:, 1, 1] = columns[f"{name}[2,2]"]

    paths_path = os.path.join(from_dir, "paths.csv")
    paths = np.zeros((n, 0), dtype=np.int16)
    if os.path.exists(paths_path):
        with open(paths_path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            next(reader, None)
            path_rows = [row[1:] for row in reader]
        paths = np.array(path_rows, dtype=np.int16)
        if paths.shape[0] != n:
            raise DataError("paths.csv and draws.csv have different draw counts")

    samples = PosteriorSamples(
        pin=pin, P=P, theta=theta, sigma=sigma, omega=omega, paths=paths,
        config=GibbsConfig(seed=0, burn_in=0, kept_draws=n, num_states=K),
        seed=0, chain_index=0, relabel_count=0,
        identification="reloaded from draws export",
    )
    target = out_dir or from_dir
    os.makedirs(target, exist_ok=True)
    write_summary_csv(summarize_posterior(samples),
                      os.path.join(target, "posterior_summary.csv"))
    if paths.shape[1] and K == 2:
        write_activity_csv(state_activity_means(samples),
                           os.path.join(target, "activity_profile.csv"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiddenspend",
        description="Impute a competitor's hidden marketing activity from "
                    "weekly sales series.")
    sub = parser.add_subparsers(dest="command", required=True)

    impute = sub.add_parser("impute", help="run the full estimation pipeline")
    impute.add_argument("--config", required=True, help="JSON run configuration")
    impute.add_argument("--seed", type=int, help="override the configured seed")

    simulate = sub.add_parser("simulate", help="generate a synthetic dataset")
    simulate.add_argument("--params", help="JSON generator parameters "
                                           "(omitted fields use calibrated defaults)")
    simulate.add_argument("--seed", type=int, help="override the params seed")
    simulate.add_argument("--out", required=True, help="output directory")

    validate = sub.add_parser("validate", help="run the built-in oracle suite")
    validate.add_argument("--out", help="directory for validation.json")

    report = sub.add_parser("report", help="re-render tables from stored draws")
    report.add_argument("--from", dest="from_dir", required=True,
                        help="directory containing draws.csv")
    report.add_argument("--out", help="target directory (default: --from)")
    return parser


_EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4, ValidationError: 5}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "impute":
            return cmd_impute(args.config, args.seed)
        if args.command == "simulate":
            return cmd_simulate(args.params, args.seed, args.out)
        if args.command == "validate":
            return cmd_validate(args.out)
        return cmd_report(args.from_dir, args.out)
    except HiddenSpendError as err:
        code = _EXIT_CODES.get(type(err), 1)
        record = {"error": type(err).__name__, "message": str(err), "exit_code": code}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        if isinstance(err, ConfigError):
            parser.print_usage(sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
