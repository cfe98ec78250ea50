"""
Request revenue, the server revenue curve and the QoS utilization threshold.

Request revenue ``A[e, m, i]`` is the expected per-minute throughput of one
request of category ``i`` from location ``m`` on server ``e``. It is both
what a placement earns and the capacity it consumes. A boosted regression
tree ensemble learns it from labelled historical samples; the fitted trees are
exported into plain arrays so prediction, persistence and the revenue matrix
never need the scikit-learn estimator again.

Historical labels come from ``ThroughputProfile``, the synthetic ground truth
standing in for production throughput logs.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor

from seer.errors import InsufficientHistoryError, TrainingDataError
from seer.models import RequestTrace, RevenueCurveParams, RevenueMatrix, ServerFleet
from seer.rng import substream, substream_seed
from seer.schema import FleetConfig, RevenueModelConfig

logger = logging.getLogger(__name__)

# Column order of revenue model inputs.
FEATURES = ("category", "location", "server", "bandwidth", "server_location")

QOS_PERCENTILE = 80


# -- fleet -------------------------------------------------------------------


def build_fleet(config: FleetConfig, locations: int, seed: int) -> ServerFleet:
    """Servers round-robin over locations with log-normal bandwidths, unless listed explicitly."""
    if config.bandwidths is not None:
        bandwidth = np.asarray(config.bandwidths, dtype=float)
    else:
        rng = substream(seed, "fleet")
        sigma = config.bandwidth_sigma
        bandwidth = config.bandwidth_mean * rng.lognormal(-0.5 * sigma * sigma, sigma, size=config.servers)
    if config.locations is not None:
        server_locations = np.asarray(config.locations, dtype=np.int64)
    else:
        server_locations = np.arange(config.servers) % locations + 1
    return ServerFleet.from_arrays(bandwidth, server_locations, locations)


# -- synthetic ground truth --------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThroughputProfile:
    """Expected per-request throughput as a product of feature factors."""

    server_factor: np.ndarray
    base: float = 0.8
    content_factor: tuple[float, ...] = (1.3, 1.0, 0.75, 0.9)
    platform_factor: tuple[float, ...] = (1.15, 1.05, 0.85, 0.9)
    peak_discount: float = 0.9
    bitrate_step: float = 0.25
    bandwidth_reference: float = 350.0
    bandwidth_exponent: float = 0.3
    distance_decay: float = 0.12
    noise: float = 0.1

    @classmethod
    def for_fleet(cls, fleet: ServerFleet, seed: int, spread: float = 0.25) -> "ThroughputProfile":
        """A profile with a per-server efficiency factor drawn from the ``revenue`` stream."""
        rng = substream(seed, "revenue", 0)
        return cls(server_factor=rng.lognormal(-0.5 * spread * spread, spread, size=fleet.size))

    def expected(self, content, platform, peak, bitrate_class, servers, fleet: ServerFleet, locations) -> np.ndarray:
        """Noise-free throughput; ``servers`` and ``locations`` are 1-based."""
        servers = np.asarray(servers, dtype=np.int64) - 1
        locations = np.asarray(locations, dtype=np.int64) - 1
        bandwidth = fleet.bandwidth[servers]
        distance = fleet.distances[servers, locations]
        return (
            self.base
            * np.asarray(self.content_factor)[np.asarray(content, dtype=np.int64)]
            * np.asarray(self.platform_factor)[np.asarray(platform, dtype=np.int64)]
            * np.where(np.asarray(peak, dtype=bool), self.peak_discount, 1.0)
            * (1 + self.bitrate_step * np.asarray(bitrate_class, dtype=float))
            * (bandwidth / self.bandwidth_reference) ** self.bandwidth_exponent
            * np.exp(-self.distance_decay * distance)
            * self.server_factor[servers]
        )

    def sample(self, rng: np.random.Generator, *args, **kwargs) -> np.ndarray:
        """``expected`` times mean-one log-normal noise."""
        mean = self.expected(*args, **kwargs)
        sigma = self.noise
        return mean * rng.lognormal(-0.5 * sigma * sigma, sigma, size=mean.shape)


def revenue_samples(
    trace: RequestTrace,
    categories: np.ndarray,
    fleet: ServerFleet,
    profile: ThroughputProfile,
    count: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw ``count`` labelled samples from historical requests, each paired
    with a uniformly chosen server. ``categories`` holds the 1-based category
    of every request in ``trace``. Returns ``(features, labels)`` with columns
    in ``FEATURES`` order.
    """
    if not len(trace):
        raise TrainingDataError("no historical requests to label")
    rng = substream(seed, "revenue", 1)
    picks = rng.integers(0, len(trace), size=count)
    servers = rng.integers(1, fleet.size + 1, size=count)
    locations = trace.location[picks].astype(np.int64)
    labels = profile.sample(
        rng,
        trace.content[picks],
        trace.platform[picks],
        trace.peak[picks],
        trace.bitrate_class[picks],
        servers,
        fleet,
        locations,
    )
    features = np.column_stack(
        [
            np.asarray(categories)[picks],
            locations,
            servers,
            fleet.bandwidth[servers - 1],
            fleet.server_locations[servers - 1],
        ]
    ).astype(float)
    return features, labels


# -- boosted trees -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """One exported tree. Leaves have ``left == -1``; ``x <= threshold`` goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, rows: np.ndarray) -> np.ndarray:
        # Split thresholds were learnt on float32 inputs.
        rows = np.asarray(rows, dtype=np.float32).astype(np.float64)
        node = np.zeros(len(rows), dtype=np.int64)
        active = self.left[node] != -1
        while active.any():
            current = node[active]
            goes_left = rows[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(goes_left, self.left[current], self.right[current])
            active = self.left[node] != -1
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            value=np.asarray(data["value"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class RevenueModel:
    """Boosted ensemble: ``base + Σ shrinkage · tree(x)``, clamped at zero."""

    base: float
    shrinkage: float
    trees: tuple[RegressionTree, ...] = ()
    training_loss: tuple[float, ...] = field(default=())

    def predict_many(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        out = np.full(len(rows), self.base)
        for tree in self.trees:
            out += self.shrinkage * tree.predict(rows)
        return np.maximum(out, 0.0)

    def to_dict(self) -> dict:
        return {
            "features": list(FEATURES),
            "base": self.base,
            "shrinkage": self.shrinkage,
            "training_loss": list(self.training_loss),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RevenueModel":
        return cls(
            base=float(data["base"]),
            shrinkage=float(data["shrinkage"]),
            trees=tuple(RegressionTree.from_dict(t) for t in data["trees"]),
            training_loss=tuple(float(v) for v in data.get("training_loss", ())),
        )


def _export_tree(estimator) -> RegressionTree:
    tree = estimator.tree_
    return RegressionTree(
        feature=np.asarray(tree.feature, dtype=np.int64),
        threshold=np.asarray(tree.threshold, dtype=float),
        left=np.asarray(tree.children_left, dtype=np.int64),
        right=np.asarray(tree.children_right, dtype=np.int64),
        value=np.asarray(tree.value, dtype=float).reshape(-1),
    )


def train_revenue_model(
    features: np.ndarray,
    labels: np.ndarray,
    config: RevenueModelConfig | None = None,
    seed: int = 0,
) -> RevenueModel:
    """
    Fit squared-error gradient boosting and export the trees.

    ``features`` is (n, 5) in ``FEATURES`` order; labels must be >= 0.
    ``training_loss[k]`` is the training MSE after ``k + 1`` rounds.
    """
    config = config or RevenueModelConfig()
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels, dtype=float).ravel()
    if not len(labels):
        raise TrainingDataError("revenue model needs at least one sample")
    if features.shape != (len(labels), len(FEATURES)):
        raise TrainingDataError(f"features must be (n, {len(FEATURES)}), got {features.shape}")
    if np.any(labels < 0) or not np.all(np.isfinite(labels)):
        raise TrainingDataError("revenue labels must be finite and >= 0")

    estimator = GradientBoostingRegressor(
        loss="squared_error",
        n_estimators=config.rounds,
        learning_rate=config.shrinkage,
        max_depth=config.max_depth,
        subsample=1.0,
        random_state=substream_seed(seed, "revenue"),
    )
    estimator.fit(features, labels)
    base = float(np.asarray(estimator.init_.constant_).reshape(-1)[0])
    trees = tuple(_export_tree(stage[0]) for stage in estimator.estimators_)

    losses = []
    prediction = np.full(len(labels), base)
    for tree in trees:
        prediction = prediction + config.shrinkage * tree.predict(features)
        losses.append(float(np.mean((labels - prediction) ** 2)))
    model = RevenueModel(base=base, shrinkage=config.shrinkage, trees=trees, training_loss=tuple(losses))
    logger.info("trained revenue model: %d trees, final training MSE %.5g", len(trees), losses[-1])
    return model


def predict_request_revenue(model: RevenueModel, i: int, m: int, e: int, bandwidth: float, server_location: int) -> float:
    """A single A[e, m, i] prediction (same arithmetic as ``predict_many``)."""
    return float(model.predict_many(np.array([[i, m, e, bandwidth, server_location]], dtype=float))[0])


def build_revenue_matrix(model: RevenueModel, fleet: ServerFleet, locations: int, categories: int) -> RevenueMatrix:
    """Evaluate the model on every (server, location, category) combination."""
    e, m, i = np.indices((fleet.size, locations, categories)).reshape(3, -1) + 1
    rows = np.column_stack([i, m, e, fleet.bandwidth[e - 1], fleet.server_locations[e - 1]]).astype(float)
    return RevenueMatrix(model.predict_many(rows).reshape(fleet.size, locations, categories))


# -- revenue curve and β -----------------------------------------------------


def server_revenue(utilization: float, params: RevenueCurveParams) -> float:
    """
    rev(U): 0 below α, ``gamma_factor · U`` above β, ``U`` otherwise.
    U == α and U == β take the middle branch.
    """
    if utilization < 0:
        raise ValueError(f"utilization must be >= 0, got {utilization}")
    if utilization < params.alpha:
        return 0.0
    if utilization > params.beta:
        return params.gamma_factor * utilization
    return float(utilization)


def server_revenue_array(utilization: np.ndarray, params: RevenueCurveParams) -> np.ndarray:
    """Vectorised ``server_revenue``."""
    u = np.asarray(utilization, dtype=float)
    return np.where(u < params.alpha, 0.0, np.where(u > params.beta, params.gamma_factor * u, u))


def _utilization_at_percentile(history: np.ndarray, column: int, rank: int) -> float:
    order = np.argsort(history[:, column], kind="stable")
    return float(history[order[rank - 1], 0])


def estimate_beta(
    history: Sequence[tuple[float, float, float]] | np.ndarray,
    alpha: float = 0.0,
    bounds: tuple[float, float] | None = None,
) -> float:
    """
    β = min(U at the 80th-percentile startup latency, U at the 80th-percentile
    error rate), reading each percentile by nearest rank over samples sorted
    (stably) by that metric. The result is clamped into ``bounds`` when given
    and always into (alpha, 1].
    """
    samples = np.asarray(history, dtype=float).reshape(-1, 3)
    if not len(samples):
        raise InsufficientHistoryError("β estimation needs at least one QoS sample")
    rank = max(1, math.ceil(QOS_PERCENTILE * len(samples) / 100))
    beta = min(_utilization_at_percentile(samples, 1, rank), _utilization_at_percentile(samples, 2, rank))
    if bounds is not None:
        beta = min(max(beta, bounds[0]), bounds[1])
    beta = min(beta, 1.0)
    if beta <= alpha:
        beta = float(np.nextafter(alpha, 1.0))
    return beta
