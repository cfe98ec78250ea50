"""
In-cycle stages: match real demand to the plan, then place what is left.

Demand is handled per ``(m, i)`` group in lexicographic order; inside a group
requests are interchangeable, so processing a group's count at once is the
same as handling its requests one by one in arrival order.

Every placement charges ``A[e, m, i]`` against server ``e``. A placement is
allowed when ``remain + CAPACITY_TOL >= cost``.
"""

import heapq
import logging
import math

import numpy as np

from seer.models import (
    CAPACITY_TOL,
    FleetState,
    Mode,
    PreScheduleStrategy,
    RequestMatrix,
    RevenueCurveParams,
    RevenueMatrix,
    ScheduleAssignment,
    ServerFleet,
    ServerState,
)

logger = logging.getLogger(__name__)


def match_requests(actual: RequestMatrix, strategy: PreScheduleStrategy) -> ScheduleAssignment:
    """
    Fill each (m, i) group from the servers with the largest planned count
    first (lower id on ties), never beyond the plan. Surplus demand becomes
    leftover; unused plan is simply left idle.
    """
    counts = np.asarray(actual.rounded().counts, dtype=np.int64)
    planned = strategy.x
    if planned.shape[1:] != counts.shape:
        raise ValueError(f"strategy {planned.shape} does not match demand {counts.shape}")
    order = np.argsort(-planned, axis=0, kind="stable")
    ranked = np.take_along_axis(planned, order, axis=0)
    before = np.cumsum(ranked, axis=0) - ranked
    granted = np.clip(counts[None] - before, 0, ranked)

    assignment = ScheduleAssignment.empty(*planned.shape)
    np.put_along_axis(assignment.matched, order, granted, axis=0)
    assignment.leftover = counts - assignment.matched.sum(axis=0)
    return assignment


def fleet_state(
    fleet: ServerFleet,
    assignment: ScheduleAssignment,
    revenue: RevenueMatrix,
    active: np.ndarray | None = None,
) -> FleetState:
    """Load bookkeeping for ``assignment``: load_e = Σ s[e, m, i] · A[e, m, i]."""
    state = FleetState.fresh(fleet)
    if active is not None:
        state.active = state.active & np.asarray(active, dtype=bool)
    state.load = (assignment.s * revenue.values).sum(axis=(1, 2))
    state.discarded = assignment.discarded.copy()
    return state


def remaining_bandwidth(
    fleet: ServerFleet,
    assignment: ScheduleAssignment,
    revenue: RevenueMatrix,
    alpha: float = 0.0,
) -> list[ServerState]:
    """B_e^remain = B_e - Σ s·A per server; negative values are clamped to 0 with a warning."""
    state = fleet_state(fleet, assignment, revenue)
    overloaded = np.flatnonzero(state.remain < 0)
    if len(overloaded):
        logger.warning("servers %s overloaded; clamping remaining bandwidth to 0", (overloaded + 1).tolist())
    states = state.servers(alpha)
    return [
        ServerState(s.id, s.load, max(s.remain, 0.0), s.utilization, s.discarded, s.withdrawal_risk)
        for s in states
    ]


def trim_overload(assignment: ScheduleAssignment, state: FleetState, revenue: RevenueMatrix) -> int:
    """
    Move matched requests off servers whose load exceeds B_e back to the
    leftover pool, latest (m, i) group first. Returns the number moved.
    """
    moved = 0
    for e in np.flatnonzero(state.load > state.bandwidth + CAPACITY_TOL):
        excess = state.load[e] - state.bandwidth[e]
        groups = np.argwhere(assignment.matched[e] > 0)[::-1]
        for m, i in groups:
            if excess <= CAPACITY_TOL:
                break
            cost = revenue.values[e, m, i]
            take = min(int(assignment.matched[e, m, i]), math.ceil((excess - CAPACITY_TOL) / cost) if cost > 0 else 0)
            assignment.matched[e, m, i] -= take
            assignment.leftover[m, i] += take
            state.load[e] -= take * cost
            excess -= take * cost
            moved += take
    if moved:
        logger.warning("trimmed %d planned requests from overloaded servers", moved)
    return moved


def apply_aggressive_filter(
    assignment: ScheduleAssignment,
    state: FleetState,
    revenue: RevenueMatrix,
    alpha: float,
    beta: float = 1.0,
) -> int:
    """
    Discard servers whose utilization is below α and move their requests,
    one at a time, to the kept server with the lowest current utilization
    that stays within β (lower id on ties). Low servers are visited from the
    least utilized up; one whose requests cannot all be moved keeps them and
    stays in service. When every eligible server is below α nothing is
    discarded. Returns the number of discarded servers.
    """
    if alpha <= 0:
        return 0
    eligible = state.eligible
    low = eligible & (state.utilization < alpha)
    keep = eligible & ~low
    if not low.any() or not keep.any():
        return 0

    candidates = np.flatnonzero(low)
    candidates = candidates[np.argsort(state.utilization[candidates], kind="stable")]
    discarded = 0
    for e in candidates:
        moves = _moves_within_beta(assignment, state, revenue, e, keep, beta)
        if moves is None:
            continue
        for stage, m, i, target in moves:
            cost = revenue.values[:, m, i]
            stage[e, m, i] -= 1
            assignment.reallocated[target, m, i] += 1
            state.load[target] += cost[target]
        state.load[e] = 0.0
        state.discarded[e] = True
        discarded += 1
    assignment.discarded = state.discarded.copy()
    if discarded:
        logger.debug("aggressive filter discarded %d server(s)", discarded)
    return discarded


def _moves_within_beta(assignment, state, revenue, e, keep, beta):
    """Targets for every request on ``e``, or None if one of them fits nowhere."""
    load = state.load.copy()
    moves = []
    for m, i in np.argwhere(assignment.s[e] > 0):
        cost = revenue.values[:, m, i]
        for stage in (assignment.matched, assignment.reallocated, assignment.rescheduled):
            for _ in range(int(stage[e, m, i])):
                fits = keep & ((load + cost) / state.bandwidth <= beta)
                if not fits.any():
                    return None
                target = int(np.argmin(np.where(fits, load / state.bandwidth, np.inf)))
                load[target] += cost[target]
                moves.append((stage, m, i, target))
    return moves


def place_nearest(
    counts: np.ndarray,
    stage: np.ndarray,
    assignment: ScheduleAssignment,
    state: FleetState,
    fleet: ServerFleet,
    revenue: RevenueMatrix,
):
    """
    Place ``counts`` (M x N) request by request: closest server first, most
    remaining bandwidth next, lowest id last. Unplaceable requests are
    added to ``assignment.dropped``.
    """
    eligible = state.eligible
    for m, i in np.argwhere(counts > 0):
        count = int(counts[m, i])
        cost = revenue.values[:, m, i]
        distance = fleet.distances[:, m]
        for tier in np.unique(distance[eligible]):
            members = np.flatnonzero(eligible & (distance == tier))
            remain = state.remain
            heap = [(-remain[e], e) for e in members if remain[e] + CAPACITY_TOL >= cost[e]]
            heapq.heapify(heap)
            while count and heap:
                _, e = heapq.heappop(heap)
                stage[e, m, i] += 1
                state.load[e] += cost[e]
                count -= 1
                left = state.bandwidth[e] - state.load[e]
                if left + CAPACITY_TOL >= cost[e]:
                    heapq.heappush(heap, (-left, e))
            if not count:
                break
        assignment.dropped[m, i] += count


def reschedule(
    assignment: ScheduleAssignment,
    state: FleetState,
    fleet: ServerFleet,
    revenue: RevenueMatrix,
) -> ScheduleAssignment:
    """Place every leftover on the nearest non-discarded server with room."""
    place_nearest(assignment.leftover, assignment.rescheduled, assignment, state, fleet, revenue)
    dropped = assignment.dropped_total
    if dropped:
        logger.warning("%d request(s) dropped: no server with remaining capacity", dropped)
    return assignment


def execute_cycle(
    actual: RequestMatrix,
    strategy: PreScheduleStrategy,
    fleet: ServerFleet,
    revenue: RevenueMatrix,
    params: RevenueCurveParams,
    mode: Mode = Mode.CONSERVATIVE,
    active: np.ndarray | None = None,
) -> tuple[ScheduleAssignment, FleetState]:
    """Match and reschedule one cycle; aggressive mode then filters on the resulting utilization."""
    assignment = match_requests(actual, strategy)
    if active is not None:
        # plan may predate a withdrawal
        gone = ~np.asarray(active, dtype=bool)
        assignment.leftover += assignment.matched[gone].sum(axis=0)
        assignment.matched[gone] = 0
    state = fleet_state(fleet, assignment, revenue, active)
    trim_overload(assignment, state, revenue)
    reschedule(assignment, state, fleet, revenue)
    if Mode(mode) == Mode.AGGRESSIVE:
        apply_aggressive_filter(assignment, state, revenue, params.alpha, params.beta)
    return assignment, state
