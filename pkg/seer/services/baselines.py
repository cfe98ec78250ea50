"""
Comparison schedulers without a prediction stage.

All four consume the realised demand matrix, the fleet and the revenue
matrix, and put every placement in ``ScheduleAssignment.matched``.

- ``origin``: nearest server, most remaining bandwidth, lowest id.
- ``gp``: nearest server with room, lowest id.
- ``greedy``: highest ``A[e, m, i]`` with room, lowest id. Fills servers to B_e.
- ``maxflow``: integral Edmonds-Karp flow on source -> (m, i) -> server ->
  sink, with server capacity β·B_e (or B_e) in A units.
"""

import logging
import math
from typing import Protocol

import networkx as nx
import numpy as np
from networkx.algorithms.flow import edmonds_karp

from seer.models import (
    CAPACITY_TOL,
    FleetState,
    RequestMatrix,
    RevenueCurveParams,
    RevenueMatrix,
    ScheduleAssignment,
    ServerFleet,
)
from seer.services.scheduler import place_nearest

logger = logging.getLogger(__name__)

SOURCE = "source"
SINK = "sink"


class CycleScheduler(Protocol):
    """What the simulator needs from a single-shot scheduler."""

    name: str

    def schedule(
        self,
        actual: RequestMatrix,
        fleet: ServerFleet,
        revenue: RevenueMatrix,
        params: RevenueCurveParams,
        active: np.ndarray | None = None,
    ) -> ScheduleAssignment: ...


def _start(actual: RequestMatrix, fleet: ServerFleet, active):
    counts = np.asarray(actual.rounded().counts, dtype=np.int64)
    assignment = ScheduleAssignment.empty(fleet.size, *counts.shape, single_stage=True)
    state = FleetState.fresh(fleet)
    if active is not None:
        state.active = state.active & np.asarray(active, dtype=bool)
    return counts, assignment, state


def _units_that_fit(remain: float, cost: float, wanted: int) -> int:
    if cost <= 0:
        return wanted
    return max(0, min(wanted, math.floor((remain + CAPACITY_TOL) / cost)))


def _fill_in_order(counts, assignment, state, revenue, ranking):
    """Fill each (m, i) group along ``ranking(m, i)``, as many units per server as fit."""
    for m, i in np.argwhere(counts > 0):
        count = int(counts[m, i])
        cost = revenue.values[:, m, i]
        for e in ranking(m, i):
            if not count:
                break
            take = _units_that_fit(state.bandwidth[e] - state.load[e], cost[e], count)
            if take:
                assignment.matched[e, m, i] += take
                state.load[e] += take * cost[e]
                count -= take
        assignment.dropped[m, i] += count


def schedule_origin(actual: RequestMatrix, fleet: ServerFleet, revenue: RevenueMatrix, active=None) -> ScheduleAssignment:
    """Nearest server with the most remaining bandwidth."""
    counts, assignment, state = _start(actual, fleet, active)
    place_nearest(counts, assignment.matched, assignment, state, fleet, revenue)
    return assignment


def schedule_gp(actual: RequestMatrix, fleet: ServerFleet, revenue: RevenueMatrix, active=None) -> ScheduleAssignment:
    """Nearest available server, lowest id on ties."""
    counts, assignment, state = _start(actual, fleet, active)
    eligible = np.flatnonzero(state.eligible)

    def ranking(m, _i):
        # lexsort: last key is primary.
        return eligible[np.lexsort((eligible, fleet.distances[eligible, m]))]

    _fill_in_order(counts, assignment, state, revenue, ranking)
    return assignment


def schedule_greedy(actual: RequestMatrix, fleet: ServerFleet, revenue: RevenueMatrix, active=None) -> ScheduleAssignment:
    """Highest request revenue first, until each server's bandwidth is used up."""
    counts, assignment, state = _start(actual, fleet, active)
    _fill_in_order(counts, assignment, state, revenue, _by_revenue(revenue, np.flatnonzero(state.eligible)))
    return assignment


def flow_network(
    counts: np.ndarray,
    revenue: RevenueMatrix,
    capacity: np.ndarray,
    eligible: np.ndarray,
) -> nx.DiGraph:
    """
    Request-count network. Demand edges carry r[m, i]; a (m, i) -> e edge
    carries as many of that group's requests as fit in ``capacity[e]``; the
    e -> sink edge carries as many of the cheapest request e can reach as fit
    in ``capacity[e]``, capped by the demand that can reach it.

    The sink edges relax the cost-unit capacity, so the flow value bounds the
    request count of every placement that respects ``capacity``.
    """
    graph = nx.DiGraph()
    graph.add_node(SOURCE)
    servers = np.flatnonzero(eligible)
    reach: dict[int, list[tuple[float, int]]] = {int(e): [] for e in servers}
    for m, i in np.argwhere(counts > 0):
        demand = int(counts[m, i])
        node = ("demand", int(m), int(i))
        graph.add_edge(SOURCE, node, capacity=demand)
        for e in servers:
            cost = float(revenue.values[e, m, i])
            units = _units_that_fit(capacity[e], cost, demand)
            if units:
                graph.add_edge(node, ("server", int(e)), capacity=units)
                reach[int(e)].append((cost, units))
    for e, edges in reach.items():
        if not edges:
            continue
        cheapest = min(cost for cost, _ in edges)
        units = _units_that_fit(capacity[e], cheapest, sum(units for _, units in edges))
        if units:
            graph.add_edge(("server", e), SINK, capacity=units)
    graph.add_node(SINK)
    return graph


def _limited_state(state: FleetState, limit: np.ndarray) -> FleetState:
    return FleetState(
        bandwidth=limit,
        load=np.zeros(len(limit)),
        active=state.active.copy(),
        discarded=state.discarded.copy(),
    )


def _by_cost(revenue: RevenueMatrix, eligible: np.ndarray):
    def ranking(m, i):
        return eligible[np.lexsort((eligible, revenue.values[eligible, m, i]))]

    return ranking


def _by_revenue(revenue: RevenueMatrix, eligible: np.ndarray):
    def ranking(m, i):
        return eligible[np.lexsort((eligible, -revenue.values[eligible, m, i]))]

    return ranking


def schedule_maxflow(
    actual: RequestMatrix,
    fleet: ServerFleet,
    revenue: RevenueMatrix,
    params: RevenueCurveParams | None = None,
    active=None,
    capacity: str = "beta",
) -> ScheduleAssignment:
    """
    Route demand with a maximum flow, then turn the flow into placements.

    Flow units are placed (m, i) groups in lexicographic order while the
    server has room under its capacity. Requests the flow over-routed, or
    did not route, go to the cheapest server with room. A flow-guided
    placement can still place fewer requests than filling by request
    revenue under the same capacity; the larger placement is returned.
    """
    counts, assignment, state = _start(actual, fleet, active)
    beta = params.beta if params is not None else 1.0
    limit = state.bandwidth * (beta if capacity == "beta" else 1.0)
    graph = flow_network(counts, revenue, limit, state.eligible)
    value, flow = nx.maximum_flow(graph, SOURCE, SINK, flow_func=edmonds_karp)
    logger.debug("max flow routed %d of %d requests", value, int(counts.sum()))

    routed = _limited_state(state, limit)
    pending = np.zeros_like(counts)
    for m, i in np.argwhere(counts > 0):
        node = ("demand", int(m), int(i))
        remaining = int(counts[m, i])
        for target, units in sorted(flow.get(node, {}).items(), key=lambda item: item[0][1]):
            if not units:
                continue
            e = target[1]
            cost = revenue.values[e, m, i]
            take = _units_that_fit(limit[e] - routed.load[e], cost, min(int(units), remaining))
            assignment.matched[e, m, i] += take
            routed.load[e] += take * cost
            remaining -= take
        pending[m, i] = remaining
    eligible = np.flatnonzero(state.eligible)
    _fill_in_order(pending, assignment, routed, revenue, _by_cost(revenue, eligible))

    filled = ScheduleAssignment.empty(fleet.size, *counts.shape, single_stage=True)
    _fill_in_order(counts, filled, _limited_state(state, limit), revenue, _by_revenue(revenue, eligible))
    if filled.assigned_total > assignment.assigned_total:
        logger.debug(
            "revenue-order fill places %d, flow placement %d", filled.assigned_total, assignment.assigned_total
        )
        return filled
    return assignment


class OriginScheduler:
    name = "origin"

    def schedule(self, actual, fleet, revenue, params, active=None) -> ScheduleAssignment:
        return schedule_origin(actual, fleet, revenue, active)


class GPScheduler:
    name = "gp"

    def schedule(self, actual, fleet, revenue, params, active=None) -> ScheduleAssignment:
        return schedule_gp(actual, fleet, revenue, active)


class GreedyScheduler:
    name = "greedy"

    def schedule(self, actual, fleet, revenue, params, active=None) -> ScheduleAssignment:
        return schedule_greedy(actual, fleet, revenue, active)


class MaxFlowScheduler:
    name = "maxflow"

    def __init__(self, capacity: str = "beta"):
        self.capacity = capacity

    def schedule(self, actual, fleet, revenue, params, active=None) -> ScheduleAssignment:
        return schedule_maxflow(actual, fleet, revenue, params, active, self.capacity)


BASELINES = {
    "origin": OriginScheduler,
    "gp": GPScheduler,
    "greedy": GreedyScheduler,
    "maxflow": MaxFlowScheduler,
}
