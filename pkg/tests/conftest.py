"""Shared builders for the test suite."""

import datetime as dt

import numpy as np

from hiddenspend.dataset import ColumnSchema, SeriesTable, TransformedSeries


def make_table(T=12, seed=7, with_competitor_spend=True) -> SeriesTable:
    rng = np.random.default_rng(seed)
    hidden = rng.random(T) < 0.4
    return SeriesTable(
        period_index=np.arange(1, T + 1),
        dates=[dt.date(2018, 1, 1) + dt.timedelta(weeks=t) for t in range(T)],
        sales_a=rng.integers(1300, 4600, T).astype(float),
        sales_b=rng.integers(300, 1300, T).astype(float),
        spend_a=rng.uniform(0.0, 600_000.0, T),
        covariates={
            "seasonality": rng.uniform(1800.0, 3200.0, T),
            "gift": (rng.random(T) < 0.1).astype(float),
            "market_index": rng.uniform(8000.0, 13000.0, T),
        },
        indicators=("gift",),
        spend_b_actual=np.where(hidden, rng.uniform(30_000.0, 200_000.0, T), 0.0)
        if with_competitor_spend else None,
    )


def make_schema(with_competitor_spend=True) -> ColumnSchema:
    return ColumnSchema(
        date="date",
        focal_sales="sales_a",
        competitor_sales="sales_b",
        focal_spend="spend_a",
        competitor_spend="spend_b" if with_competitor_spend else None,
        covariates={"seasonality": "seasonality", "gift": "gift",
                    "market_index": "market_index"},
        indicators=("gift",),
    )


def make_transformed(y1, y2, z=None, covariates=None) -> TransformedSeries:
    y1 = np.asarray(y1, dtype=float)
    return TransformedSeries(
        y1=y1,
        y2=np.asarray(y2, dtype=float),
        z=np.zeros_like(y1) if z is None else np.asarray(z, dtype=float),
        covariates={} if covariates is None
        else {k: np.asarray(v, dtype=float) for k, v in covariates.items()},
        period_index=np.arange(1, y1.shape[0] + 1),
    )
