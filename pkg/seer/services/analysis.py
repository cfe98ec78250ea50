"""
Measurement statistics over request and utilization series.

``acf`` uses one global mean for every lag, so ρ(h) is
``Σ_{t<D-h} (d_t - d̄)(d_{t+h} - d̄) / Σ_t (d_t - d̄)²``. Percentiles use the
nearest-rank rule (rank ``ceil(p/100 · n)``, at least 1), which is also how
the β estimator reads QoS percentiles.
"""

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from seer.errors import ShapeMismatchError, UndefinedCorrelationError
from seer.models import RequestTrace


def _series(values, name: str = "series") -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != 1:
        raise ShapeMismatchError(f"{name} must be one-dimensional")
    if len(array) < 2:
        raise ValueError(f"{name} needs at least 2 values, got {len(array)}")
    return array


def autocorrelation(values, lag: int) -> float:
    """ρ(h) for a single lag; negative lags are read as ``|h|``."""
    series = _series(values)
    lag = abs(lag)
    if lag >= len(series):
        raise ValueError(f"lag {lag} must be below the series length {len(series)}")
    centred = series - series.mean()
    denominator = float(np.dot(centred, centred))
    if denominator == 0:
        raise UndefinedCorrelationError("autocorrelation of a constant series is undefined")
    if lag == 0:
        return 1.0
    return float(np.dot(centred[:-lag], centred[lag:]) / denominator)


def acf(values, max_lag: int) -> list[float]:
    """ρ(0..max_lag)."""
    series = _series(values)
    if not 0 <= max_lag < len(series):
        raise ValueError(f"max_lag must lie in [0, {len(series) - 1}], got {max_lag}")
    return [autocorrelation(series, h) for h in range(max_lag + 1)]


def pearson_corr(a, b) -> float:
    """Pearson correlation, clipped to [-1, 1] against rounding drift."""
    x = _series(a, "a")
    y = _series(b, "b")
    if len(x) != len(y):
        raise ShapeMismatchError(f"series lengths differ: {len(x)} and {len(y)}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.dot(dx, dx))
    sy = float(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation with a zero-variance series is undefined")
    return float(np.clip(np.dot(dx, dy) / math.sqrt(sx * sy), -1.0, 1.0))


def spatial_correlation(series_by_location: Sequence) -> list[tuple[int, int, float]]:
    """Pearson ρ for every location pair ``(i < j)``, 1-based."""
    rows = [np.asarray(s, dtype=float) for s in series_by_location]
    return [
        (i + 1, j + 1, pearson_corr(rows[i], rows[j]))
        for i, j in itertools.combinations(range(len(rows)), 2)
    ]


def per_cycle_totals(trace: RequestTrace) -> np.ndarray:
    """Requests per cycle over the whole horizon."""
    return np.bincount(trace.cycle.astype(np.int64), minlength=trace.horizon)


def location_series(trace: RequestTrace) -> np.ndarray:
    """Requests per (location, cycle), shape (M, horizon)."""
    flat = (trace.location.astype(np.int64) - 1) * trace.horizon + trace.cycle.astype(np.int64)
    counts = np.bincount(flat, minlength=trace.locations * trace.horizon)
    return counts.reshape(trace.locations, trace.horizon)


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    """Sorted samples with nearest-rank percentile queries."""

    values: np.ndarray

    def query(self, p: float) -> float:
        """Value at percentile ``p`` in [0, 100]."""
        if not 0 <= p <= 100:
            raise ValueError(f"percentile must lie in [0, 100], got {p}")
        rank = max(1, math.ceil(p * len(self.values) / 100))
        return float(self.values[rank - 1])

    def fraction_at_or_below(self, x: float) -> float:
        """Share of samples ``<= x``."""
        return float(np.searchsorted(self.values, x, side="right") / len(self.values))

    def __len__(self) -> int:
        return len(self.values)


def empirical_cdf(samples) -> EmpiricalCDF:
    values = np.sort(np.asarray(samples, dtype=float).ravel())
    if not len(values):
        raise ValueError("empirical CDF needs at least one sample")
    return EmpiricalCDF(values)
