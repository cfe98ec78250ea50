import math

import numpy as np
import pytest

from seer.errors import InsufficientHistoryError, TrainingDataError
from seer.models import RevenueCurveParams
from seer.schema import FleetConfig, RevenueModelConfig
from seer.services.revenue import (
    ThroughputProfile,
    build_fleet,
    build_revenue_matrix,
    estimate_beta,
    predict_request_revenue,
    revenue_samples,
    server_revenue,
    server_revenue_array,
    train_revenue_model,
)
from seer.services.workload import concat_traces, synthesize_trace
from seer.schema import WorkloadConfig


def walk(tree, row):
    """Independent recursive traversal of an exported tree."""
    node = 0
    while tree.left[node] != -1:
        if row[tree.feature[node]] <= tree.threshold[node]:
            node = tree.left[node]
        else:
            node = tree.right[node]
    return tree.value[node]


@pytest.fixture(scope="module")
def toy_samples():
    rng = np.random.default_rng(21)
    n = 300
    i = rng.integers(1, 4, size=n)
    m = rng.integers(1, 3, size=n)
    e = rng.integers(1, 5, size=n)
    bandwidth = np.array([100.0, 200.0, 300.0, 400.0])[e - 1]
    location = np.array([1, 1, 2, 2])[e - 1]
    features = np.column_stack([i, m, e, bandwidth, location]).astype(float)
    labels = 0.5 * i + 0.1 * e + 0.2 * (m == location) + rng.random(n) * 0.05
    return features, labels


@pytest.fixture(scope="module")
def toy_model(toy_samples):
    return train_revenue_model(*toy_samples, RevenueModelConfig(rounds=10, max_depth=3), seed=2)


class TestServerRevenue:
    @pytest.mark.parametrize("u,expected", [(0.04, 0.0), (0.5, 0.5), (0.9, 0.18)])
    def test_branches(self, curve, u, expected):
        assert server_revenue(u, curve) == pytest.approx(expected)

    def test_thresholds_take_the_middle_branch(self, curve):
        assert server_revenue(0.05, curve) == 0.05
        assert server_revenue(0.8, curve) == 0.8

    def test_gamma_factor_is_used_above_beta(self):
        params = RevenueCurveParams(alpha=0.05, beta=0.8, gamma_factor=0.1)
        assert server_revenue(1.0, params) == pytest.approx(0.1)

    def test_never_exceeds_utilization(self, curve):
        for u in np.linspace(0, 1.5, 151):
            assert server_revenue(float(u), curve) <= u + 1e-12

    def test_drop_past_beta(self, curve):
        assert server_revenue(0.8001, curve) < server_revenue(0.8, curve)

    def test_array_matches_scalar(self, curve):
        u = np.linspace(0, 1.2, 241)
        expected = [server_revenue(float(x), curve) for x in u]
        assert np.allclose(server_revenue_array(u, curve), expected)

    def test_exact_on_random_utilizations(self):
        params = RevenueCurveParams(alpha=0.1, beta=0.75, gamma_factor=0.3)
        u = np.concatenate([np.random.default_rng(1).uniform(0, 1.5, size=10_000), [0.0, 0.1, 0.75, 1.0]])

        def piecewise(x):
            if x < params.alpha:
                return 0.0
            if x > params.beta:
                return params.gamma_factor * x
            return x

        expected = np.array([piecewise(float(x)) for x in u])
        assert np.array_equal(server_revenue_array(u, params), expected)
        assert all(server_revenue(float(x), params) == e for x, e in zip(u, expected))

    def test_negative_utilization(self, curve):
        with pytest.raises(ValueError):
            server_revenue(-0.1, curve)


class TestTraining:
    def test_constant_labels(self):
        features = np.column_stack([np.arange(1, 21)] * 5).astype(float)
        model = train_revenue_model(features, np.full(20, 3.5), RevenueModelConfig(rounds=5))
        assert model.base == pytest.approx(3.5)
        assert predict_request_revenue(model, 2, 1, 7, 50.0, 1) == pytest.approx(3.5)
        assert predict_request_revenue(model, 99, 9, 99, 1e4, 9) == pytest.approx(3.5)

    def test_single_stump_recovers_group_means(self):
        features = np.array([[1, 1, 1, 100, 1]] * 4 + [[2, 1, 1, 100, 1]] * 4, dtype=float)
        labels = np.array([2.0] * 4 + [8.0] * 4)
        model = train_revenue_model(features, labels, RevenueModelConfig(rounds=1, max_depth=1, shrinkage=1.0))
        assert predict_request_revenue(model, 1, 1, 1, 100, 1) == pytest.approx(2.0)
        assert predict_request_revenue(model, 2, 1, 1, 100, 1) == pytest.approx(8.0)

    def test_training_loss_never_rises(self, toy_model):
        losses = toy_model.training_loss
        assert len(losses) == 10
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] <= losses[0]

    def test_deterministic(self, toy_samples, toy_model):
        again = train_revenue_model(*toy_samples, RevenueModelConfig(rounds=10, max_depth=3), seed=2)
        assert again.base == toy_model.base
        assert again.training_loss == toy_model.training_loss

    def test_prediction_equals_a_tree_walk(self, toy_samples, toy_model):
        features, _ = toy_samples
        for row in features[:25]:
            expected = toy_model.base + sum(toy_model.shrinkage * walk(t, row) for t in toy_model.trees)
            assert predict_request_revenue(toy_model, *row) == pytest.approx(max(expected, 0.0))

    def test_unseen_combination_is_finite(self, toy_model):
        value = predict_request_revenue(toy_model, 3, 2, 17, 1234.0, 6)
        assert math.isfinite(value)
        assert value >= 0

    def test_empty_samples(self):
        with pytest.raises(TrainingDataError):
            train_revenue_model(np.zeros((0, 5)), np.zeros(0))

    def test_negative_labels(self):
        with pytest.raises(TrainingDataError, match=">= 0"):
            train_revenue_model(np.ones((2, 5)), np.array([1.0, -1.0]))

    def test_wrong_feature_width(self):
        with pytest.raises(TrainingDataError, match="features"):
            train_revenue_model(np.ones((2, 4)), np.ones(2))


class TestRevenueMatrix:
    def test_pointwise_agreement(self, toy_model, tiny_fleet):
        fleet = tiny_fleet
        matrix = build_revenue_matrix(toy_model, fleet, locations=2, categories=2)
        assert matrix.shape == (3, 2, 2)
        for (e, m, i), value in np.ndenumerate(matrix.values):
            server = fleet.servers[e]
            assert value == pytest.approx(
                predict_request_revenue(toy_model, i + 1, m + 1, e + 1, server.bandwidth, server.location)
            )

    def test_constant_model(self, tiny_fleet):
        features = np.ones((6, 5))
        model = train_revenue_model(features, np.full(6, 0.4), RevenueModelConfig(rounds=2))
        matrix = build_revenue_matrix(model, tiny_fleet, locations=2, categories=3)
        assert np.allclose(matrix.values, 0.4)

    def test_repeatable(self, toy_model, tiny_fleet):
        a = build_revenue_matrix(toy_model, tiny_fleet, 2, 2)
        b = build_revenue_matrix(toy_model, tiny_fleet, 2, 2)
        assert np.array_equal(a.values, b.values)


class TestEstimateBeta:
    def test_picks_the_smaller_metric_utilization(self):
        history = [
            (0.10, 100, 0.01),
            (0.30, 200, 0.02),
            (0.50, 300, 0.03),
            (0.75, 400, 0.05),
            (0.82, 500, 0.04),
        ]
        # rank ceil(0.8 * 5) = 4: latency picks U=0.75, error rate picks U=0.82.
        assert estimate_beta(history) == pytest.approx(0.75)

    def test_identical_utilization(self):
        history = [(0.6, lat, err) for lat, err in [(10, 0.3), (50, 0.1), (30, 0.2)]]
        assert estimate_beta(history) == pytest.approx(0.6)

    def test_monotone_qos(self):
        u = np.round(np.linspace(0.05, 0.95, 10), 2)
        history = np.column_stack([u, 300 + 900 * u, 0.01 + u ** 3])
        assert estimate_beta(history) == pytest.approx(u[7])

    def test_bounds_clamp(self):
        history = [(0.3, 100, 0.01)] * 3
        assert estimate_beta(history, bounds=(0.7, 0.9)) == pytest.approx(0.7)

    def test_stays_above_alpha(self):
        beta = estimate_beta([(0.02, 1, 1)], alpha=0.05)
        assert beta > 0.05
        assert beta == pytest.approx(0.05)

    def test_empty_history(self):
        with pytest.raises(InsufficientHistoryError):
            estimate_beta([])


class TestFleetAndSamples:
    def test_explicit_lists(self):
        fleet = build_fleet(FleetConfig(servers=2, bandwidths=[5.0, 7.0], locations=[2, 1]), 2, seed=0)
        assert fleet.bandwidth.tolist() == [5.0, 7.0]
        assert fleet.server_locations.tolist() == [2, 1]

    def test_generated_fleet(self):
        config = FleetConfig(servers=5, bandwidth_mean=100.0)
        fleet = build_fleet(config, 3, seed=4)
        assert fleet.server_locations.tolist() == [1, 2, 3, 1, 2]
        assert np.all(fleet.bandwidth > 0)
        assert np.array_equal(fleet.bandwidth, build_fleet(config, 3, seed=4).bandwidth)

    def test_samples_shape_and_labels(self, tiny_fleet):
        workload = WorkloadConfig(locations=2, horizon=5, base_rates=10.0, period=5,
                                  peak_windows=[{"center": 2, "half_width": 1}], bitrate_levels=2)
        trace = synthesize_trace(workload, seed=1)
        categories = np.ones(len(trace), dtype=np.int64)
        profile = ThroughputProfile.for_fleet(tiny_fleet, seed=1)
        features, labels = revenue_samples(trace, categories, tiny_fleet, profile, count=50, seed=1)
        assert features.shape == (50, 5)
        assert np.all(labels > 0)
        assert set(features[:, 2]) <= {1.0, 2.0, 3.0}

    def test_samples_need_requests(self, tiny_fleet):
        profile = ThroughputProfile.for_fleet(tiny_fleet, seed=1)
        empty = concat_traces([], 1, 2)
        with pytest.raises(TrainingDataError):
            revenue_samples(empty, np.zeros(0, dtype=np.int64), tiny_fleet, profile, count=5, seed=1)
