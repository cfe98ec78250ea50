"""
Request traces: synthesis, CSV ingestion, clustering and per-cycle matrices.

The synthetic process is a per-location Poisson stream whose intensity is a
daily sinusoid lifted by two flat-topped peak bumps (noon and evening by
default). One log-normal factor per cycle is shared by all locations, which is
what makes location series positively correlated. Every cycle draws from its
own ``workload`` sub-stream, so the simulator can regenerate cycle ``t``
without replaying cycles ``0..t-1`` and still see the trace ``synthesize_trace``
would have written.

Requests are clustered on a 10-dimensional encoding: one-hot content (4),
one-hot platform (4), the peak flag, and ``bitrate_class / (L - 1)``. The
feature space is finite, so a fitted model maps every combination to its
category once and per-cycle aggregation is a table lookup plus ``bincount``.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from seer.errors import ClusteringError, InvalidConfigError, TraceFormatError
from seer.models import CONTENT_CATEGORIES, PLATFORMS, Request, RequestMatrix, RequestTrace
from seer.rng import substream, substream_seed
from seer.schema import WorkloadConfig

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("cycle", "location", "content", "platform", "peak", "bitrate_class")
FEATURE_DIM = len(CONTENT_CATEGORIES) + len(PLATFORMS) + 2

# Probability of a high bitrate step, per platform; peak hours subtract 0.2.
PLATFORM_BITRATE_BIAS = np.array([0.8, 0.7, 0.4, 0.35])
PEAK_BITRATE_SHIFT = 0.2

# Exponent of the peak bumps; higher is flatter inside the window.
BUMP_ORDER = 8

MAX_ITERATIONS = 100
TOLERANCE = 1e-9


# -- synthesis ---------------------------------------------------------------


def _circular_distance(cycle: int, center: float, period: int) -> float:
    d = abs((cycle % period) - center) % period
    return min(d, period - d)


def is_peak(config: WorkloadConfig, cycle: int) -> bool:
    """True when ``cycle`` lies inside any configured peak window."""
    return any(
        _circular_distance(cycle, w.center, config.period) <= w.half_width
        for w in config.peak_windows
    )


def intensity(config: WorkloadConfig, cycle: int) -> np.ndarray:
    """Expected requests per location in ``cycle``, before the shared noise."""
    rates = np.asarray(config.rates(), dtype=float)
    phase = 2 * math.pi * cycle / config.period + config.sinusoid_phase
    diurnal = 1 + config.sinusoid_amplitude * math.sin(phase)
    bumps = sum(
        math.exp(-((_circular_distance(cycle, w.center, config.period) / w.half_width) ** BUMP_ORDER))
        for w in config.peak_windows
    )
    lift = 1 + (config.peak_multiplier - 1) * min(1.0, bumps)
    return rates * diurnal * lift


def _validate(config: WorkloadConfig):
    if config.horizon < 1:
        raise InvalidConfigError(f"workload horizon must be >= 1, got {config.horizon}")
    if config.locations < 1:
        raise InvalidConfigError(f"workload needs at least one location, got {config.locations}")


def synthesize_cycle(config: WorkloadConfig, seed: int, cycle: int) -> RequestTrace:
    """The requests of one cycle, drawn from that cycle's own sub-stream."""
    _validate(config)
    rng = substream(seed, "workload", cycle)
    sigma = config.common_noise
    shared = rng.lognormal(-0.5 * sigma * sigma, sigma) if sigma > 0 else 1.0
    counts = rng.poisson(intensity(config, cycle) * shared)
    total = int(counts.sum())

    peak = is_peak(config, cycle)
    content_p = np.asarray(config.content_mix, dtype=float)
    platform_p = np.asarray(config.platform_mix, dtype=float)
    content = rng.choice(len(CONTENT_CATEGORIES), size=total, p=content_p / content_p.sum())
    platform = rng.choice(len(PLATFORMS), size=total, p=platform_p / platform_p.sum())
    bias = np.clip(PLATFORM_BITRATE_BIAS[platform] - (PEAK_BITRATE_SHIFT if peak else 0.0), 0.0, 1.0)
    bitrate = rng.binomial(config.bitrate_levels - 1, bias)

    return RequestTrace(
        cycle=np.full(total, cycle, dtype=np.int32),
        location=np.repeat(np.arange(1, config.locations + 1, dtype=np.int16), counts),
        content=content.astype(np.int8),
        platform=platform.astype(np.int8),
        peak=np.full(total, peak, dtype=bool),
        bitrate_class=bitrate.astype(np.int8),
        horizon=config.horizon,
        locations=config.locations,
    )


def concat_traces(parts: Sequence[RequestTrace], horizon: int, locations: int) -> RequestTrace:
    """Join cycle slices into one trace."""
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return RequestTrace(empty, empty, empty, empty, empty.astype(bool), empty, horizon, locations)
    return RequestTrace(
        cycle=np.concatenate([p.cycle for p in parts]),
        location=np.concatenate([p.location for p in parts]),
        content=np.concatenate([p.content for p in parts]),
        platform=np.concatenate([p.platform for p in parts]),
        peak=np.concatenate([p.peak for p in parts]),
        bitrate_class=np.concatenate([p.bitrate_class for p in parts]),
        horizon=horizon,
        locations=locations,
    )


def synthesize_trace(config: WorkloadConfig, seed: int, cycles: int | None = None) -> RequestTrace:
    """
    Generate a synthetic trace for ``config.horizon`` cycles (or the first
    ``cycles`` of them). Deterministic in ``(config, seed)``.
    """
    _validate(config)
    stop = config.horizon if cycles is None else min(cycles, config.horizon)
    parts = [synthesize_cycle(config, seed, t) for t in range(stop)]
    trace = concat_traces(parts, config.horizon, config.locations)
    logger.info("synthesized %d requests over %d cycles", len(trace), stop)
    return trace


# -- CSV ---------------------------------------------------------------------


def write_trace(trace: RequestTrace, path: str | Path):
    """Write the trace CSV (header ``cycle,location,content,platform,peak,bitrate_class``)."""
    content_names = np.array([c.value for c in CONTENT_CATEGORIES])
    platform_names = np.array([p.value for p in PLATFORMS])
    frame = pd.DataFrame(
        {
            "cycle": trace.cycle.astype(np.int64),
            "location": trace.location.astype(np.int64),
            "content": content_names[trace.content.astype(np.int64)],
            "platform": platform_names[trace.platform.astype(np.int64)],
            "peak": trace.peak.astype(np.int64),
            "bitrate_class": trace.bitrate_class.astype(np.int64),
        },
        columns=list(TRACE_COLUMNS),
    )
    frame.to_csv(path, index=False)


def _trace_bounds(locations: int | None) -> dict[str, tuple[int, int | None]]:
    return {"cycle": (0, None), "location": (1, locations), "peak": (0, 1), "bitrate_class": (0, None)}


def _trace_problems(text: pd.DataFrame, values: pd.DataFrame, integer: pd.DataFrame, locations: int | None):
    """Boolean columns, in reporting order, marking rows that fail each check."""
    bounds = _trace_bounds(locations)
    problems = {}
    for column in TRACE_COLUMNS:
        if column in ("content", "platform"):
            problems[column] = values[column].isna()
            continue
        low, high = bounds[column]
        outside = values[column] < low
        if high is not None:
            outside |= values[column] > high
        problems[f"{column}:integer"] = ~integer[column]
        problems[f"{column}:range"] = integer[column] & outside
        if column == "cycle":
            problems["cycle:order"] = values["cycle"].diff() < 0
    return pd.DataFrame(problems, index=text.index)


def _problem_message(check: str, n: int, text: pd.DataFrame, values: pd.DataFrame, locations: int | None) -> str:
    column, _, kind = check.partition(":")
    raw = text.at[n, column]
    if not kind:
        return f"unknown {column} {raw!r}"
    if kind == "integer":
        return f"{column} {raw!r} is not an integer"
    if kind == "order":
        return f"cycle {int(values.at[n, 'cycle'])} precedes cycle {int(values.at[n - 1, 'cycle'])}"
    low, high = _trace_bounds(locations)[column]
    return f"{column} {int(values.at[n, column])} outside [{low}, {'inf' if high is None else high}]"


def load_trace(path: str | Path, locations: int | None = None) -> RequestTrace:
    """
    Read a trace CSV. Every data row becomes one request; the first bad row
    raises ``TraceFormatError`` naming its 1-based data row. When
    ``locations`` is omitted, M is the largest location seen.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise TraceFormatError("trace file is empty") from None

    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise TraceFormatError(f"missing column(s): {', '.join(missing)}")
    if frame.empty:
        raise TraceFormatError("trace has no data rows (horizon 0 is invalid)")

    text = frame[list(TRACE_COLUMNS)].reset_index(drop=True).apply(lambda column: column.str.strip())
    numeric = [c for c in TRACE_COLUMNS if c not in ("content", "platform")]
    integer = text[numeric].apply(lambda column: column.str.fullmatch(r"[+-]?\d+"))
    values = text[numeric].where(integer, "0").apply(pd.to_numeric).astype(np.int64)
    values["content"] = text["content"].str.lower().map({c.value: n for n, c in enumerate(CONTENT_CATEGORIES)})
    values["platform"] = text["platform"].str.lower().map({p.value: n for n, p in enumerate(PLATFORMS)})

    problems = _trace_problems(text, values, integer, locations)
    bad = problems.any(axis=1)
    if bad.any():
        n = int(bad.idxmax())
        check = problems.loc[n].idxmax()
        raise TraceFormatError(_problem_message(check, n, text, values, locations), row=n + 1)

    cycle = values["cycle"].to_numpy(dtype=np.int64)
    location = values["location"].to_numpy(dtype=np.int64)
    return RequestTrace(
        cycle=cycle,
        location=location,
        content=values["content"].to_numpy(dtype=np.int64),
        platform=values["platform"].to_numpy(dtype=np.int64),
        peak=values["peak"].to_numpy(dtype=bool),
        bitrate_class=values["bitrate_class"].to_numpy(dtype=np.int64),
        horizon=int(cycle[-1]) + 1,
        locations=locations if locations is not None else int(location.max()),
    )


# -- clustering --------------------------------------------------------------


def encode_features(content, platform, peak, bitrate_class, bitrate_levels: int) -> np.ndarray:
    """Encode request features column-wise into the (n, 10) clustering space."""
    content = np.asarray(content, dtype=np.int64)
    platform = np.asarray(platform, dtype=np.int64)
    n = len(content)
    points = np.zeros((n, FEATURE_DIM))
    rows = np.arange(n)
    points[rows, content] = 1.0
    points[rows, len(CONTENT_CATEGORIES) + platform] = 1.0
    points[:, -2] = np.asarray(peak, dtype=float)
    scale = max(bitrate_levels - 1, 1)
    points[:, -1] = np.asarray(bitrate_class, dtype=float) / scale
    return points


@dataclass(frozen=True)
class FeatureSpace:
    """Every (content, platform, peak, bitrate) combination, in a fixed order."""

    bitrate_levels: int

    @property
    def size(self) -> int:
        return len(CONTENT_CATEGORIES) * len(PLATFORMS) * 2 * self.bitrate_levels

    def index(self, content, platform, peak, bitrate_class) -> np.ndarray:
        """Flat combination index of each request."""
        content = np.asarray(content, dtype=np.int64)
        platform = np.asarray(platform, dtype=np.int64)
        peak = np.asarray(peak, dtype=np.int64)
        bitrate = np.asarray(bitrate_class, dtype=np.int64)
        return ((content * len(PLATFORMS) + platform) * 2 + peak) * self.bitrate_levels + bitrate

    def points(self) -> np.ndarray:
        """Encoded points of all combinations, ordered by ``index``."""
        grid = np.indices((len(CONTENT_CATEGORIES), len(PLATFORMS), 2, self.bitrate_levels))
        content, platform, peak, bitrate = (g.ravel() for g in grid)
        return encode_features(content, platform, peak, bitrate, self.bitrate_levels)


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Fitted k-means centroids in the encoded feature space."""

    centroids: np.ndarray
    bitrate_levels: int
    iterations: int = 0
    inertia: float = 0.0

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=float)
        if centroids.ndim != 2 or centroids.shape[0] < 1 or centroids.shape[1] != FEATURE_DIM:
            raise ClusteringError(f"centroids must be (k, {FEATURE_DIM}), got {centroids.shape}")
        if self.bitrate_levels < 1:
            raise ClusteringError("bitrate_levels must be >= 1")
        object.__setattr__(self, "centroids", centroids)
        space = FeatureSpace(self.bitrate_levels)
        object.__setattr__(self, "_table", self.assign(space.points()))

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assign(self, points: np.ndarray) -> np.ndarray:
        """1-based nearest centroid per point; ties go to the lowest index."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        distances = ((points[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(distances, axis=1) + 1

    @property
    def category_table(self) -> np.ndarray:
        """Category of every feature-space combination (see ``FeatureSpace.index``)."""
        return self._table

    def categorize(self, trace: RequestTrace) -> np.ndarray:
        """1-based category of every request in ``trace``."""
        bitrate = np.asarray(trace.bitrate_class, dtype=np.int64)
        inside = bitrate < self.bitrate_levels
        categories = np.empty(len(trace), dtype=np.int64)
        space = FeatureSpace(self.bitrate_levels)
        categories[inside] = self._table[
            space.index(trace.content[inside], trace.platform[inside], trace.peak[inside], bitrate[inside])
        ]
        if not inside.all():
            outside = ~inside
            categories[outside] = self.assign(
                encode_features(
                    trace.content[outside],
                    trace.platform[outside],
                    trace.peak[outside],
                    bitrate[outside],
                    self.bitrate_levels,
                )
            )
        return categories

    def to_dict(self) -> dict:
        return {
            "centroids": self.centroids.tolist(),
            "bitrate_levels": self.bitrate_levels,
            "iterations": self.iterations,
            "inertia": self.inertia,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterModel":
        return cls(
            centroids=np.asarray(data["centroids"], dtype=float),
            bitrate_levels=int(data["bitrate_levels"]),
            iterations=int(data.get("iterations", 0)),
            inertia=float(data.get("inertia", 0.0)),
        )


def within_cluster_ss(centroids: np.ndarray, points: np.ndarray, weights: np.ndarray | None = None) -> float:
    """The k-means objective: weighted squared distance to the nearest centroid."""
    points = np.asarray(points, dtype=float)
    if weights is None:
        weights = np.ones(len(points))
    distances = ((points[:, None, :] - np.asarray(centroids)[None, :, :]) ** 2).sum(axis=2)
    return float((distances.min(axis=1) * weights).sum())


def lloyd_step(centroids: np.ndarray, points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One Lloyd iteration. Returns (new centroids, 0-based labels). Empty clusters keep their centroid."""
    distances = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(distances, axis=1)
    updated = centroids.copy()
    for c in range(len(centroids)):
        members = labels == c
        mass = weights[members].sum()
        if mass > 0:
            updated[c] = (points[members] * weights[members, None]).sum(axis=0) / mass
    return updated, labels


def _distinct_points(requests: RequestTrace | Sequence[Request], bitrate_levels: int | None):
    """Distinct encoded points of ``requests`` with their multiplicities."""
    trace = requests if isinstance(requests, RequestTrace) else RequestTrace.from_requests(requests)
    bitrate = np.asarray(trace.bitrate_class, dtype=np.int64)
    if bitrate_levels is None:
        bitrate_levels = int(bitrate.max()) + 1 if len(bitrate) else 1
    if len(bitrate) and int(bitrate.max()) >= bitrate_levels:
        raise ClusteringError(f"bitrate class {int(bitrate.max())} outside {bitrate_levels} levels")
    space = FeatureSpace(bitrate_levels)
    points = space.points()
    counts = np.bincount(
        space.index(trace.content, trace.platform, trace.peak, bitrate), minlength=len(points)
    )
    present = counts > 0
    return points[present], counts[present].astype(float), bitrate_levels


def fit_clusters(
    requests: RequestTrace | Sequence[Request],
    k: int,
    seed: int,
    bitrate_levels: int | None = None,
) -> ClusterModel:
    """
    Fit k-means with seeded k-means++ initialisation.

    The multiset of encoded requests is collapsed to its distinct points with
    multiplicities as sample weights (identical Lloyd iterates, far cheaper).
    scikit-learn runs the Lloyd iterations; a final polish repeats Lloyd steps
    until the labels stop changing, so every training point sits with its
    nearest centroid.
    """
    if k < 1:
        raise ClusteringError(f"cluster count must be >= 1, got {k}")
    unique, weights, bitrate_levels = _distinct_points(requests, bitrate_levels)
    if not len(unique):
        raise ClusteringError("cannot cluster an empty request set")
    if len(unique) < k:
        raise ClusteringError(f"only {len(unique)} distinct feature points for k={k}")

    estimator = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=MAX_ITERATIONS,
        tol=TOLERANCE,
        random_state=substream_seed(seed, "clustering"),
        algorithm="lloyd",
    )
    estimator.fit(unique, sample_weight=weights)
    centroids = np.asarray(estimator.cluster_centers_, dtype=float)
    iterations = int(estimator.n_iter_)

    labels = np.argmin(((unique[:, None, :] - centroids[None]) ** 2).sum(axis=2), axis=1)
    for _ in range(MAX_ITERATIONS):
        centroids, new_labels = lloyd_step(centroids, unique, weights)
        iterations += 1
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    if len(np.unique(np.round(centroids, 12), axis=0)) < k:
        raise ClusteringError("k-means produced coincident centroids")

    inertia = within_cluster_ss(centroids, unique, weights)
    logger.info("fitted %d clusters on %d distinct points (%d iterations, inertia %.4g)",
                k, len(unique), iterations, inertia)
    return ClusterModel(centroids=centroids, bitrate_levels=bitrate_levels,
                        iterations=iterations, inertia=inertia)


def assign_category(request: Request, model: ClusterModel) -> int:
    """1-based category of a single request."""
    point = encode_features(
        [CONTENT_CATEGORIES.index(request.content)],
        [PLATFORMS.index(request.platform)],
        [request.peak],
        [request.bitrate_class],
        model.bitrate_levels,
    )
    return int(model.assign(point)[0])


# -- aggregation -------------------------------------------------------------


def aggregate_matrix(
    requests: RequestTrace | Sequence[Request],
    model: ClusterModel,
    locations: int,
    cycle: int | None = None,
) -> RequestMatrix:
    """Count one cycle's requests per (location, category)."""
    if isinstance(requests, RequestTrace):
        trace = requests
    else:
        trace = RequestTrace.from_requests(requests, locations=locations) if requests else None
    if trace is None or not len(trace):
        return RequestMatrix.zeros(locations, model.k, 0 if cycle is None else cycle)
    if trace.cycle[0] != trace.cycle[-1]:
        raise TraceFormatError(
            f"requests span cycles {int(trace.cycle[0])}..{int(trace.cycle[-1])}; aggregate one cycle at a time"
        )
    if int(trace.location.max()) > locations:
        raise TraceFormatError(f"location {int(trace.location.max())} exceeds M={locations}")
    categories = model.categorize(trace)
    flat = (trace.location.astype(np.int64) - 1) * model.k + (categories - 1)
    counts = np.bincount(flat, minlength=locations * model.k).reshape(locations, model.k)
    return RequestMatrix(counts, int(trace.cycle[0]) if cycle is None else cycle)


def cycle_matrices(trace: RequestTrace, model: ClusterModel, start: int = 0, stop: int | None = None) -> list[RequestMatrix]:
    """One RequestMatrix per cycle in ``[start, stop)``, empty cycles included."""
    stop = trace.horizon if stop is None else stop
    lo = np.searchsorted(trace.cycle, start, side="left")
    hi = np.searchsorted(trace.cycle, stop, side="left")
    window = trace.take(slice(lo, hi))
    categories = model.categorize(window)
    size = trace.locations * model.k
    flat = (window.cycle.astype(np.int64) - start) * size + (window.location.astype(np.int64) - 1) * model.k + (categories - 1)
    counts = np.bincount(flat, minlength=(stop - start) * size).reshape(stop - start, trace.locations, model.k)
    return [RequestMatrix(counts[n], start + n) for n in range(stop - start)]
