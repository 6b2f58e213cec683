"""Weekly sales panel: loading, validation, seasonality, and log transforms.

The estimation pipeline works on a two-product weekly panel: unit sales for
the focal and competitor products, the focal product's own marketing spend,
optional covariates (a seasonality index, promotion indicators, a market
index), and, when available for scoring, the competitor's actual spend.
"""

from __future__ import annotations

import csv
import datetime as dt
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from ._fileio import atomic_open
from .errors import ConfigError, DataError

WEEKS_PER_YEAR = 52

# Spend is rescaled to millions of currency units at ingestion.
SPEND_SCALE = 1e6


def week_of_year(day: dt.date) -> int:
    """Week label for a date: 7-day blocks from January 1, so days 1-7 of the
    year are week 1.  Returns 1..53; the short trailing week 53 is kept
    distinct here and merged into week 52 by the seasonality index."""
    return (day.timetuple().tm_yday - 1) // 7 + 1


@dataclass(frozen=True)
class HistoryRecord:
    """One historical weekly observation used to build the seasonality index."""

    week: int
    value: float
    valid: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.week <= 53:
            raise DataError(f"history week {self.week} outside 1..53")

    @classmethod
    def from_date(cls, day: dt.date, value: float, valid: bool = True) -> "HistoryRecord":
        return cls(week_of_year(day), value, valid)


@dataclass(frozen=True)
class SeasonalityIndex:
    """Average category sales per calendar week, 52 entries."""

    week_value: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.week_value, dtype=float)
        if values.shape != (WEEKS_PER_YEAR,):
            raise DataError(f"seasonality index needs {WEEKS_PER_YEAR} values, got {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataError("seasonality index values must be finite and positive")
        object.__setattr__(self, "week_value", values)

    def value_for(self, week_or_date: int | dt.date) -> float:
        week = week_or_date if isinstance(week_or_date, int) else week_of_year(week_or_date)
        if not 1 <= week <= 53:
            raise DataError(f"week {week} outside 1..53")
        return float(self.week_value[min(week, WEEKS_PER_YEAR) - 1])


def build_seasonality_index(history: Iterable[HistoryRecord]) -> SeasonalityIndex:
    """Average valid positive observations per week; week 53 folds into 52.

    Raises DataError when any of the 52 weeks has no valid observation.
    """
    totals = np.zeros(WEEKS_PER_YEAR)
    counts = np.zeros(WEEKS_PER_YEAR, dtype=int)
    for record in history:
        if not record.valid or not np.isfinite(record.value) or record.value <= 0:
            continue
        slot = min(record.week, WEEKS_PER_YEAR) - 1
        totals[slot] += record.value
        counts[slot] += 1
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        weeks = ", ".join(str(w + 1) for w in empty)
        raise DataError(f"seasonality index: no valid observations for week(s) {weeks}")
    return SeasonalityIndex(totals / counts)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps logical series names onto CSV column names.

    ``covariates`` maps logical covariate names to columns; ``indicators``
    lists the covariates constrained to {0,1}.
    """

    date: str
    focal_sales: str
    competitor_sales: str
    focal_spend: str
    competitor_spend: str | None = None
    covariates: Mapping[str, str] = field(default_factory=dict)
    indicators: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", dict(self.covariates))
        object.__setattr__(self, "indicators", tuple(self.indicators))
        for name in self.indicators:
            if name not in self.covariates:
                raise ConfigError(f"indicator '{name}' is not a declared covariate")

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> "ColumnSchema":
        required = ("date", "focal_sales", "competitor_sales", "focal_spend")
        missing = [key for key in required if key not in raw]
        if missing:
            raise ConfigError(f"column schema missing keys: {', '.join(missing)}")
        known = set(required) | {"competitor_spend", "covariates", "indicators"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"column schema has unknown keys: {', '.join(unknown)}")
        return cls(
            date=str(raw["date"]),
            focal_sales=str(raw["focal_sales"]),
            competitor_sales=str(raw["competitor_sales"]),
            focal_spend=str(raw["focal_spend"]),
            competitor_spend=(None if raw.get("competitor_spend") is None
                              else str(raw["competitor_spend"])),
            covariates=dict(raw.get("covariates", {})),  # type: ignore[arg-type]
            indicators=tuple(raw.get("indicators", ())),  # type: ignore[arg-type]
        )

    def swapped(self) -> "ColumnSchema":
        """Exchange the focal and competitor roles.

        Requires a competitor spend column, which becomes the focal spend of
        the swapped panel; the original focal spend becomes the held-out one.
        """
        if self.competitor_spend is None:
            raise ConfigError("role swap needs a competitor spend column")
        return ColumnSchema(
            date=self.date,
            focal_sales=self.competitor_sales,
            competitor_sales=self.focal_sales,
            focal_spend=self.competitor_spend,
            competitor_spend=self.focal_spend,
            covariates=self.covariates,
            indicators=self.indicators,
        )


@dataclass
class SeriesTable:
    """Validated weekly panel.

    sales_a is the focal product, sales_b the competitor whose marketing
    activity is unobserved.  spend_b_actual is optional and only used for
    after-the-fact scoring.
    """

    period_index: np.ndarray
    dates: list[dt.date]
    sales_a: np.ndarray
    sales_b: np.ndarray
    spend_a: np.ndarray
    covariates: dict[str, np.ndarray]
    indicators: tuple[str, ...] = ()
    spend_b_actual: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.period_index = np.asarray(self.period_index, dtype=int)
        self.sales_a = np.asarray(self.sales_a, dtype=float)
        self.sales_b = np.asarray(self.sales_b, dtype=float)
        self.spend_a = np.asarray(self.spend_a, dtype=float)
        if self.spend_b_actual is not None:
            self.spend_b_actual = np.asarray(self.spend_b_actual, dtype=float)
        self.covariates = {k: np.asarray(v, dtype=float) for k, v in self.covariates.items()}
        self.indicators = tuple(self.indicators)
        self._validate()

    def _validate(self) -> None:
        T = self.num_periods
        if T < 2:
            raise DataError(f"need at least 2 periods, got {T}")
        columns: list[tuple[str, np.ndarray]] = [
            ("sales_a", self.sales_a),
            ("sales_b", self.sales_b),
            ("spend_a", self.spend_a),
        ]
        if self.spend_b_actual is not None:
            columns.append(("spend_b_actual", self.spend_b_actual))
        columns.extend(self.covariates.items())
        for name, values in columns:
            if values.shape != (T,):
                raise DataError(f"column '{name}' has length {values.shape}, expected {T}")
            if not np.all(np.isfinite(values)):
                raise DataError(f"column '{name}' contains non-finite values")
        if len(self.dates) != T:
            raise DataError(f"{len(self.dates)} dates for {T} periods")
        diffs = np.diff(self.period_index)
        if T and (self.period_index[0] != 1 or np.any(diffs != 1)):
            raise DataError("period indices must run 1..T consecutively")
        for name, values in (("sales_a", self.sales_a), ("sales_b", self.sales_b)):
            if np.any(values < 1):
                bad = int(np.argmax(values < 1)) + 1
                raise DataError(f"column '{name}': count < 1 at period {bad}")
        for name, values in (("spend_a", self.spend_a), ("spend_b_actual", self.spend_b_actual)):
            if values is not None and np.any(values < 0):
                bad = int(np.argmax(values < 0)) + 1
                raise DataError(f"column '{name}': negative spend at period {bad}")
        for name in self.indicators:
            if name not in self.covariates:
                raise DataError(f"indicator '{name}' is not a covariate column")
            values = self.covariates[name]
            if not np.all((values == 0.0) | (values == 1.0)):
                bad = int(np.argmax((values != 0.0) & (values != 1.0))) + 1
                raise DataError(f"indicator '{name}' not in {{0,1}} at period {bad}")

    @property
    def num_periods(self) -> int:
        return self.sales_a.shape[0]


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise DataError(f"row {row}, column '{column}': cannot parse {text!r} as a number") from None


def load_series_csv(path: str, schema: ColumnSchema) -> SeriesTable:
    """Read a weekly panel from CSV using the column mapping in ``schema``.

    Rows are numbered from 1 (header excluded) in error messages.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError(f"{path}: no data rows")
        wanted = [schema.date, schema.focal_sales, schema.competitor_sales, schema.focal_spend]
        if schema.competitor_spend is not None:
            wanted.append(schema.competitor_spend)
        wanted.extend(schema.covariates.values())
        missing = [name for name in wanted if name not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column(s): {', '.join(sorted(set(missing)))}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    T = len(rows)
    dates: list[dt.date] = []
    sales_a = np.empty(T)
    sales_b = np.empty(T)
    spend_a = np.empty(T)
    spend_b = np.empty(T) if schema.competitor_spend is not None else None
    covariates = {name: np.empty(T) for name in schema.covariates}
    for i, row in enumerate(rows):
        n = i + 1
        raw_date = (row.get(schema.date) or "").strip()
        try:
            dates.append(dt.date.fromisoformat(raw_date))
        except ValueError:
            raise DataError(
                f"row {n}, column '{schema.date}': cannot parse {raw_date!r} as an ISO date"
            ) from None
        sales_a[i] = _parse_cell(row[schema.focal_sales], n, schema.focal_sales)
        sales_b[i] = _parse_cell(row[schema.competitor_sales], n, schema.competitor_sales)
        spend_a[i] = _parse_cell(row[schema.focal_spend], n, schema.focal_spend)
        if spend_b is not None:
            spend_b[i] = _parse_cell(row[schema.competitor_spend], n, schema.competitor_spend)
        for logical, column in schema.covariates.items():
            covariates[logical][i] = _parse_cell(row[column], n, column)

    return SeriesTable(
        period_index=np.arange(1, T + 1),
        dates=dates,
        sales_a=sales_a,
        sales_b=sales_b,
        spend_a=spend_a,
        covariates=covariates,
        indicators=schema.indicators,
        spend_b_actual=spend_b,
    )


def write_series_csv(table: SeriesTable, path: str, schema: ColumnSchema) -> None:
    """Inverse of load_series_csv for the same schema."""
    header = [schema.date, schema.focal_sales, schema.competitor_sales, schema.focal_spend]
    if schema.competitor_spend is not None:
        if table.spend_b_actual is None:
            raise DataError("schema names a competitor spend column but the table has none")
        header.append(schema.competitor_spend)
    header.extend(schema.covariates[name] for name in schema.covariates)
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(table.num_periods):
            row: list[object] = [
                table.dates[i].isoformat(),
                _format_number(table.sales_a[i]),
                _format_number(table.sales_b[i]),
                _format_number(table.spend_a[i]),
            ]
            if schema.competitor_spend is not None:
                row.append(_format_number(table.spend_b_actual[i]))
            row.extend(_format_number(table.covariates[name][i]) for name in schema.covariates)
            writer.writerow(row)


def _format_number(value: float) -> str:
    return repr(float(value))


@dataclass
class TransformedSeries:
    """Model-scale series: log sales and spend in millions, covariates carried."""

    y1: np.ndarray
    y2: np.ndarray
    z: np.ndarray
    covariates: dict[str, np.ndarray]
    period_index: np.ndarray

    def __post_init__(self) -> None:
        T = self.y1.shape[0]
        for name, values in (("y2", self.y2), ("z", self.z)):
            if values.shape != (T,):
                raise DataError(f"transformed column '{name}' has wrong length")
        if self.period_index.shape != (T,):
            raise DataError("period index has wrong length")

    @property
    def num_periods(self) -> int:
        return self.y1.shape[0]

    def span(self, first_row: int, last_row: int) -> "TransformedSeries":
        """Rows first_row..last_row inclusive, 1-based."""
        if not (1 <= first_row <= last_row <= self.num_periods) or last_row - first_row < 1:
            raise ConfigError(
                f"row span {first_row}..{last_row} invalid for {self.num_periods} periods")
        sl = slice(first_row - 1, last_row)
        return TransformedSeries(
            y1=self.y1[sl].copy(),
            y2=self.y2[sl].copy(),
            z=self.z[sl].copy(),
            covariates={k: v[sl].copy() for k, v in self.covariates.items()},
            period_index=self.period_index[sl].copy(),
        )

    def head(self, periods: int) -> "TransformedSeries":
        """First ``periods`` rows, for expanding-window refits."""
        return self.span(1, periods)


def transform_dataset(table: SeriesTable) -> TransformedSeries:
    """y1 = ln sales_a, y2 = ln sales_b, z = spend_a in millions."""
    return TransformedSeries(
        y1=np.log(table.sales_a),
        y2=np.log(table.sales_b),
        z=table.spend_a / SPEND_SCALE,
        covariates={k: v.copy() for k, v in table.covariates.items()},
        period_index=table.period_index.copy(),
    )


@dataclass(frozen=True)
class VariableSummary:
    variable: str
    minimum: float
    maximum: float
    mean: float
    sd: float


def summarize_variables(table: SeriesTable) -> list[VariableSummary]:
    """Min/max/mean/sd per observed column, sample sd (ddof=1)."""
    columns: list[tuple[str, np.ndarray]] = [
        ("focal_sales", table.sales_a),
        ("competitor_sales", table.sales_b),
        ("focal_spend", table.spend_a),
    ]
    if table.spend_b_actual is not None:
        columns.append(("competitor_spend", table.spend_b_actual))
    columns.extend(table.covariates.items())
    return [
        VariableSummary(
            variable=name,
            minimum=float(np.min(values)),
            maximum=float(np.max(values)),
            mean=float(np.mean(values)),
            sd=float(np.std(values, ddof=1)),
        )
        for name, values in columns
    ]


def write_variables_csv(summaries: Sequence[VariableSummary], path: str) -> None:
    with atomic_open(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["variable", "min", "max", "mean", "sd"])
        for s in summaries:
            writer.writerow([s.variable, repr(s.minimum), repr(s.maximum), repr(s.mean), repr(s.sd)])
