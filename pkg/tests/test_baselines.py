import networkx as nx
import numpy as np
import pytest

from seer.models import RequestMatrix, RevenueCurveParams, RevenueMatrix, ServerFleet
from seer.services.baselines import (
    BASELINES,
    MaxFlowScheduler,
    flow_network,
    schedule_gp,
    schedule_greedy,
    schedule_maxflow,
    schedule_origin,
)

SCHEDULES = [schedule_origin, schedule_gp, schedule_greedy]


def demand_of(counts):
    return RequestMatrix(np.asarray(counts, dtype=np.int64))


def unit_costs(servers, locations=1, categories=1):
    return RevenueMatrix(np.ones((servers, locations, categories)))


def random_instance(seed):
    rng = np.random.default_rng(seed)
    fleet = ServerFleet.from_arrays(rng.uniform(2, 12, size=4), [1, 1, 2, 3], locations=3)
    revenue = RevenueMatrix(rng.uniform(0.4, 1.6, size=(4, 3, 2)))
    return fleet, revenue, demand_of(rng.integers(0, 9, size=(3, 2)))


class TestOrigin:
    def test_single_server_takes_everything(self):
        fleet = ServerFleet.from_arrays([100.0], [1], locations=1)
        assignment = schedule_origin(demand_of([[7]]), fleet, unit_costs(1))
        assert assignment.matched[0, 0, 0] == 7
        assert assignment.single_stage

    def test_most_remaining_bandwidth_at_equal_distance(self):
        fleet = ServerFleet.from_arrays([5.0, 9.0], [1, 1], locations=1)
        assignment = schedule_origin(demand_of([[1]]), fleet, unit_costs(2))
        assert assignment.matched[:, 0, 0].tolist() == [0, 1]

    def test_remaining_bandwidth_is_tracked_per_request(self):
        fleet = ServerFleet.from_arrays([5.0, 9.0], [1, 1], locations=1)
        assignment = schedule_origin(demand_of([[6]]), fleet, unit_costs(2))
        # 9 -> 8 -> 7 -> 6 -> 5, then the tie at 5 goes to the lower id.
        assert assignment.matched[:, 0, 0].tolist() == [1, 5]


class TestGp:
    def test_colocated_server(self):
        fleet = ServerFleet.from_arrays([10.0, 10.0], [1, 2], locations=2)
        assignment = schedule_gp(demand_of([[0], [3]]), fleet, unit_costs(2, locations=2))
        assert assignment.matched[:, 1, 0].tolist() == [0, 3]

    def test_full_nearest_spills_to_next_nearest(self):
        fleet = ServerFleet.from_arrays([1.0, 10.0], [1, 2], locations=2)
        assignment = schedule_gp(demand_of([[3], [0]]), fleet, unit_costs(2, locations=2))
        assert assignment.matched[:, 0, 0].tolist() == [1, 2]

    def test_ties_go_to_the_lower_id(self):
        fleet = ServerFleet.from_arrays([10.0, 50.0], [1, 1], locations=1)
        assignment = schedule_gp(demand_of([[4]]), fleet, unit_costs(2))
        assert assignment.matched[:, 0, 0].tolist() == [4, 0]


class TestGreedy:
    def test_highest_revenue_server(self):
        fleet = ServerFleet.from_arrays([100.0, 100.0], [1, 1], locations=1)
        revenue = RevenueMatrix(np.array([[[2.0]], [[5.0]]]))
        assignment = schedule_greedy(demand_of([[1]]), fleet, revenue)
        assert assignment.matched[:, 0, 0].tolist() == [0, 1]

    def test_full_best_server_spills_to_second_best(self):
        fleet = ServerFleet.from_arrays([100.0, 5.0], [1, 1], locations=1)
        revenue = RevenueMatrix(np.array([[[2.0]], [[5.0]]]))
        assignment = schedule_greedy(demand_of([[2]]), fleet, revenue)
        assert assignment.matched[:, 0, 0].tolist() == [1, 1]

    def test_fills_to_bandwidth(self):
        fleet = ServerFleet.from_arrays([3.0], [1], locations=1)
        assignment = schedule_greedy(demand_of([[5]]), fleet, unit_costs(1))
        assert assignment.matched[0, 0, 0] == 3
        assert assignment.dropped_total == 2


class TestMaxFlow:
    def test_single_server_with_room(self):
        fleet = ServerFleet.from_arrays([100.0], [1], locations=1)
        assignment = schedule_maxflow(demand_of([[6]]), fleet, unit_costs(1), RevenueCurveParams())
        assert assignment.matched[0, 0, 0] == 6

    def test_one_unit_per_server(self):
        # β·B = 1.0 on both servers.
        fleet = ServerFleet.from_arrays([1.25, 1.25], [1, 1], locations=1)
        assignment = schedule_maxflow(demand_of([[2]]), fleet, unit_costs(2), RevenueCurveParams())
        assert assignment.matched[:, 0, 0].tolist() == [1, 1]

    def test_bandwidth_capacity_variant(self):
        fleet = ServerFleet.from_arrays([2.0], [1], locations=1)
        beta_capped = schedule_maxflow(demand_of([[2]]), fleet, unit_costs(1), RevenueCurveParams())
        full = MaxFlowScheduler("bandwidth").schedule(demand_of([[2]]), fleet, unit_costs(1), RevenueCurveParams())
        assert beta_capped.matched.sum() == 1
        assert full.matched.sum() == 2

    def test_network_shape(self):
        graph = flow_network(np.array([[2, 0]]), unit_costs(2, categories=2), np.array([1.0, 3.0]),
                             np.array([True, True]))
        assert graph["source"][("demand", 0, 0)]["capacity"] == 2
        assert graph[("demand", 0, 0)][("server", 0)]["capacity"] == 1
        assert graph[("server", 1)]["sink"]["capacity"] == 2

    def test_sink_edge_counts_the_cheapest_reachable_request(self):
        revenue = RevenueMatrix(np.array([[[1.0, 2.0]]]))
        graph = flow_network(np.array([[3, 3]]), revenue, np.array([4.0]), np.array([True]))
        assert graph[("demand", 0, 0)][("server", 0)]["capacity"] == 3
        assert graph[("demand", 0, 1)][("server", 0)]["capacity"] == 2
        assert graph[("server", 0)]["sink"]["capacity"] == 4

    def test_over_routed_flow_moves_to_a_server_with_room(self, mocker):
        fleet = ServerFleet.from_arrays([2.0, 10.0], [1, 1], locations=1)
        revenue = RevenueMatrix(np.array([[[2.0]], [[3.0]]]))
        flow = {("demand", 0, 0): {("server", 0): 2}}
        mocker.patch("seer.services.baselines.nx.maximum_flow", return_value=(2, flow))
        assignment = MaxFlowScheduler("bandwidth").schedule(demand_of([[2]]), fleet, revenue, RevenueCurveParams())
        assert assignment.matched[:, 0, 0].tolist() == [1, 1]
        assert assignment.dropped_total == 0

    @pytest.mark.parametrize("seed", range(40))
    def test_places_at_least_greedy_with_mixed_costs(self, seed):
        fleet, revenue, actual = random_instance(seed)
        flow = MaxFlowScheduler("bandwidth").schedule(actual, fleet, revenue, RevenueCurveParams())
        greedy = schedule_greedy(actual, fleet, revenue)
        assert flow.assigned_total >= greedy.assigned_total
        load = (flow.s * revenue.values).sum(axis=(1, 2))
        assert np.all(load <= fleet.bandwidth + 1e-9)

    @pytest.mark.parametrize("seed", range(40))
    def test_flow_value_bounds_greedy(self, seed):
        fleet, revenue, actual = random_instance(seed)
        graph = flow_network(actual.counts, revenue, fleet.bandwidth, fleet.active)
        value = nx.maximum_flow_value(graph, "source", "sink")
        assert value >= schedule_greedy(actual, fleet, revenue).assigned_total

    @pytest.mark.parametrize("seed", range(6))
    def test_unit_costs_route_at_least_greedy(self, seed):
        rng = np.random.default_rng(seed)
        fleet = ServerFleet.from_arrays(rng.integers(1, 6, size=3).astype(float), [1, 2, 2], locations=2)
        revenue = unit_costs(3, locations=2, categories=2)
        actual = demand_of(rng.integers(0, 6, size=(2, 2)))
        flow = MaxFlowScheduler("bandwidth").schedule(actual, fleet, revenue, RevenueCurveParams())
        greedy = schedule_greedy(actual, fleet, revenue)
        assert flow.assigned_total >= greedy.assigned_total


class TestShared:
    @pytest.mark.parametrize("name", sorted(BASELINES))
    def test_zero_requests(self, name, tiny_fleet, unit_revenue, curve):
        assignment = BASELINES[name]().schedule(demand_of([[0, 0], [0, 0]]), tiny_fleet, unit_revenue, curve)
        assert not assignment.s.any()
        assert assignment.dropped_total == 0

    @pytest.mark.parametrize("name", sorted(BASELINES))
    @pytest.mark.parametrize("seed", range(5))
    def test_conservation_and_capacity(self, name, seed, curve):
        fleet, revenue, actual = random_instance(seed)
        assignment = BASELINES[name]().schedule(actual, fleet, revenue, curve)
        assert assignment.assigned_total + assignment.dropped_total == actual.total
        load = (assignment.s * revenue.values).sum(axis=(1, 2))
        assert np.all(load <= fleet.bandwidth + 1e-9)
        if name == "maxflow":
            assert np.all(load <= curve.beta * fleet.bandwidth + 1e-9)

    @pytest.mark.parametrize("name", sorted(BASELINES))
    def test_deterministic(self, name, curve):
        fleet, revenue, actual = random_instance(11)
        a = BASELINES[name]().schedule(actual, fleet, revenue, curve)
        b = BASELINES[name]().schedule(actual, fleet, revenue, curve)
        assert np.array_equal(a.s, b.s)

    @pytest.mark.parametrize("name", sorted(BASELINES))
    def test_inactive_servers_get_nothing(self, name, tiny_fleet, unit_revenue, curve):
        active = np.array([True, False, True])
        assignment = BASELINES[name]().schedule(demand_of([[3, 1], [2, 2]]), tiny_fleet, unit_revenue, curve, active)
        assert assignment.s[1].sum() == 0
