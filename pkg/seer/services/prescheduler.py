"""
Pre-scheduling: turn a demand forecast into a planned placement tensor.

The location axis is averaged out of the revenue matrix (Ā = mean_m A) and the
forecast is summed per category (r̄_i = Σ_m R̂[m, i]). The reduced LP

    max  Σ_e Σ_i x̄[e, i] · Ā[e, i] / B_e
    s.t. Σ_e x̄[e, i] = r̄_i                        every category i
         Σ_i x̄[e, i] · Ā[e, i] <= (β - ε) · B_e   every eligible server
         Σ_i x̄[e, i] · Ā[e, i] >= (α + ε) · B_e   conservative mode, α > 0
         x̄ >= 0

is solved, x̄ is rounded and every server's per-category count is split over
locations. The default split follows each location's share of all predicted
requests; ``expansion="category"`` uses per-category shares instead and keeps
Σ_e x[e, m, i] equal to the forecast whenever the rounding conserved r̄_i.

In aggressive mode the α floor is dropped and servers that could not reach α
even when given all demand (capped at β) are left out of the plan. The
α-floored plan is still solved and kept when it earns more on the revenue
curve.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from seer.errors import LPInfeasibleError, LPSolverError, ShapeMismatchError
from seer.models import Mode, PreScheduleStrategy, RequestMatrix, RevenueCurveParams, RevenueMatrix, ServerFleet
from seer.schema import PreschedulerConfig
from seer.services import simplex
from seer.services.revenue import server_revenue_array

logger = logging.getLogger(__name__)

# Strict utilization bounds are closed by this margin.
EPSILON = 1e-9
LP_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    """The location-free LP inputs."""

    averaged: np.ndarray
    demand: np.ndarray
    bandwidth: np.ndarray
    alpha: float
    beta: float
    mode: Mode
    eligible: np.ndarray

    @property
    def lower_bounds(self) -> bool:
        """Whether the α floor is part of the LP."""
        return self.mode == Mode.CONSERVATIVE and self.alpha > 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.averaged.shape


@dataclass(frozen=True, eq=False)
class FractionalStrategy:
    """LP solution x̄ (E x N) with its objective."""

    x: np.ndarray
    objective: float
    utilization: np.ndarray
    solve_ms: float = 0.0


def reduce_problem(
    predicted: RequestMatrix,
    revenue: RevenueMatrix,
    fleet: ServerFleet,
    params: RevenueCurveParams,
    mode: Mode = Mode.CONSERVATIVE,
    active: np.ndarray | None = None,
) -> ReducedProblem:
    """Average A over locations, sum the forecast per category and pick eligible servers."""
    servers, locations, categories = revenue.shape
    if servers != fleet.size or (locations, categories) != predicted.shape:
        raise ShapeMismatchError(
            f"revenue matrix {revenue.shape} does not match fleet E={fleet.size} and forecast {predicted.shape}"
        )
    mode = Mode(mode)
    averaged = revenue.averaged()
    demand = np.asarray(predicted.category_totals(), dtype=float)
    bandwidth = fleet.bandwidth
    eligible = fleet.active if active is None else fleet.active & np.asarray(active, dtype=bool)
    if mode == Mode.AGGRESSIVE and params.alpha > 0:
        reachable = np.minimum(params.beta, (averaged * demand).sum(axis=1) / bandwidth)
        eligible = eligible & ~(reachable < params.alpha)
    return ReducedProblem(
        averaged=averaged,
        demand=demand,
        bandwidth=bandwidth,
        alpha=params.alpha,
        beta=params.beta,
        mode=mode,
        eligible=eligible,
    )


def _check_aggregates(problem: ReducedProblem):
    index = np.flatnonzero(problem.eligible)
    total = float(problem.demand.sum())
    if not len(index):
        if total > 0:
            raise LPInfeasibleError("no_servers", required=total, available=0.0)
        return
    costs = problem.averaged[index]
    capacity = float(((problem.beta - EPSILON) * problem.bandwidth[index]).sum())
    cheapest = float((problem.demand * costs.min(axis=0)).sum())
    if cheapest > capacity:
        raise LPInfeasibleError("beta_capacity", required=cheapest, available=capacity)
    if problem.lower_bounds:
        floor = float(((problem.alpha + EPSILON) * problem.bandwidth[index]).sum())
        richest = float((problem.demand * costs.max(axis=0)).sum())
        if floor > richest:
            raise LPInfeasibleError("alpha_floor", required=floor, available=richest)


def _lp_blocks(problem: ReducedProblem, index: np.ndarray):
    # Variables are x̄[e, i] for eligible e, flattened server-major.
    costs = problem.averaged[index]
    bandwidth = problem.bandwidth[index]
    servers, categories = costs.shape
    objective = (costs / bandwidth[:, None]).ravel()

    load = np.zeros((servers, servers * categories))
    for n in range(servers):
        load[n, n * categories:(n + 1) * categories] = costs[n]
    equality = np.tile(np.eye(categories), servers)
    upper = (problem.beta - EPSILON) * bandwidth
    lower = (problem.alpha + EPSILON) * bandwidth if problem.lower_bounds else None
    return objective, load, upper, lower, equality


def _solve_highs(objective, load, upper, lower, equality, demand):
    A_ub, b_ub = load, upper  # pylint: disable=invalid-name
    if lower is not None:
        A_ub = np.vstack([load, -load])  # pylint: disable=invalid-name
        b_ub = np.concatenate([upper, -lower])
    result = linprog(-objective, A_ub=A_ub, b_ub=b_ub, A_eq=equality, b_eq=demand,
                     bounds=(0, None), method="highs")
    if result.status == 2:
        raise LPInfeasibleError("constraints", required=float(demand.sum()), available=0.0)
    if result.status != 0:
        raise LPSolverError(f"HiGHS failed: {result.message}")
    return np.maximum(result.x, 0.0)


def solve_lp(problem: ReducedProblem, solver: str = "simplex", max_iterations: int = 20000) -> FractionalStrategy:
    """
    Solve the reduced LP. Raises ``LPInfeasibleError`` naming the violated
    aggregate: ``no_servers``, ``beta_capacity``, ``alpha_floor``, or
    ``server_bounds`` when only the per-server bounds conflict.
    """
    started = time.perf_counter()
    _check_aggregates(problem)
    servers, categories = problem.shape
    x = np.zeros((servers, categories))
    index = np.flatnonzero(problem.eligible)
    if len(index):
        objective, load, upper, lower, equality = _lp_blocks(problem, index)
        try:
            if solver == "highs":
                flat = _solve_highs(objective, load, upper, lower, equality, problem.demand)
            else:
                flat = simplex.solve(
                    objective,
                    A_ub=load,
                    b_ub=upper,
                    A_ge=load if lower is not None else None,
                    b_ge=lower,
                    A_eq=equality,
                    b_eq=problem.demand,
                    max_iterations=max_iterations,
                ).x
        except LPInfeasibleError as exc:
            raise LPInfeasibleError("server_bounds", required=exc.required, available=exc.available) from exc
        x[index] = flat.reshape(len(index), categories)

    utilization = (x * problem.averaged).sum(axis=1) / problem.bandwidth
    value = float((x * problem.averaged / problem.bandwidth[:, None]).sum())
    elapsed = (time.perf_counter() - started) * 1000
    logger.debug("LP solved with %s: objective %.6g in %.2f ms", solver, value, elapsed)
    return FractionalStrategy(x=x, objective=value, utilization=utilization, solve_ms=elapsed)


# -- integerisation ----------------------------------------------------------


def largest_remainder(quotas: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """
    Integer vectors along the last axis that sum to ``totals`` and stay within
    one unit of ``quotas``. Extra units go to the largest fractional parts,
    lowest index first on ties.
    """
    quotas = np.asarray(quotas, dtype=float)
    floors = np.floor(quotas + 1e-9)
    remainders = np.maximum(quotas - floors, 0.0)
    deficit = np.asarray(totals, dtype=np.int64) - floors.sum(axis=-1).astype(np.int64)
    order = np.argsort(-remainders, axis=-1, kind="stable")
    rank = np.argsort(order, axis=-1, kind="stable")
    extra = rank < deficit[..., None]
    return (floors + extra).astype(np.int64)


def round_fractional(x: np.ndarray, rounding: str = "nearest") -> np.ndarray:
    """``nearest`` rounds each entry (halves up); ``conserving`` keeps per-category sums."""
    if rounding == "nearest":
        return np.floor(x + 0.5).astype(np.int64)
    totals = np.floor(x.sum(axis=0) + 0.5).astype(np.int64)
    return largest_remainder(x.T, totals).T


def _integer_split(counts: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Split each ``counts`` entry over the last axis of ``weights`` (integer weights)."""
    weights = np.asarray(weights, dtype=np.int64)
    total = weights.sum(axis=-1, keepdims=True)
    counts = np.asarray(counts, dtype=np.int64)[..., None]
    numerators = counts * weights
    safe = np.where(total > 0, total, 1)
    floors = numerators // safe
    remainders = numerators % safe
    deficit = counts[..., 0] - floors.sum(axis=-1)
    order = np.argsort(-remainders, axis=-1, kind="stable")
    rank = np.argsort(order, axis=-1, kind="stable")
    return floors + (rank < deficit[..., None])


def expand_by_location(rounded: np.ndarray, forecast: np.ndarray) -> np.ndarray:
    """x[e, m, i] from each location's share of all forecast requests."""
    servers, categories = rounded.shape
    locations = forecast.shape[0]
    shares = forecast.sum(axis=1)
    if shares.sum() == 0:
        shares = np.ones(locations, dtype=np.int64)
    weights = np.broadcast_to(shares, (servers, categories, locations))
    split = _integer_split(rounded, weights)
    return np.transpose(split, (0, 2, 1))


def expand_by_category(rounded: np.ndarray, forecast: np.ndarray) -> np.ndarray:
    """
    x[e, m, i] from per-category location shares. Servers are processed in id
    order and each splits its count in proportion to the forecast requests
    not yet covered, so location margins come out exact when Σ_e n[e, i]
    equals the category total. Units beyond the total follow the forecast
    shares.
    """
    servers, categories = rounded.shape
    locations = forecast.shape[0]
    x = np.zeros((servers, locations, categories), dtype=np.int64)
    location_totals = forecast.sum(axis=1)
    for i in range(categories):
        column = forecast[:, i].astype(np.int64)
        remaining = column.copy()
        fallback = column if column.sum() > 0 else location_totals
        if fallback.sum() == 0:
            fallback = np.ones(locations, dtype=np.int64)
        for e in range(servers):
            count = int(rounded[e, i])
            if not count:
                continue
            covered = min(count, int(remaining.sum()))
            if covered:
                part = _integer_split(np.array(covered), remaining)
                remaining -= part
                x[e, :, i] += part
            if count > covered:
                x[e, :, i] += _integer_split(np.array(count - covered), fallback)
    return x


def round_and_expand(
    fractional: FractionalStrategy | np.ndarray,
    predicted: RequestMatrix,
    rounding: str = "nearest",
    expansion: str = "location",
    cycle: int | None = None,
) -> PreScheduleStrategy:
    """Round x̄ and split every server's per-category count over locations."""
    x_bar = fractional.x if isinstance(fractional, FractionalStrategy) else np.asarray(fractional, dtype=float)
    forecast = np.asarray(predicted.rounded().counts, dtype=np.int64)
    if x_bar.shape[1] != forecast.shape[1]:
        raise ShapeMismatchError(f"strategy has {x_bar.shape[1]} categories, forecast {forecast.shape[1]}")
    rounded = round_fractional(x_bar, rounding)
    if expansion == "category":
        x = expand_by_category(rounded, forecast)
    else:
        x = expand_by_location(rounded, forecast)
    return PreScheduleStrategy(x=x, cycle=predicted.cycle if cycle is None else cycle)


def utilization_slack(x_bar: np.ndarray, x: np.ndarray, revenue: RevenueMatrix, bandwidth: np.ndarray) -> np.ndarray:
    """
    Per-server bound on |planned utilization - LP utilization| introduced by
    rounding and location expansion.
    """
    averaged = revenue.averaged()
    rounded = x.sum(axis=1)
    rounding_part = (averaged * np.abs(rounded - x_bar)).sum(axis=1)
    expansion_part = (x * np.abs(revenue.values - averaged[:, None, :])).sum(axis=(1, 2))
    return (rounding_part + expansion_part) / bandwidth


def proportional_fill(problem: ReducedProblem) -> np.ndarray:
    """
    Fallback x̄: each category's demand split over eligible servers in
    proportion to β·B_e, then each server scaled down to at most β·B_e.
    """
    servers, categories = problem.shape
    x = np.zeros((servers, categories))
    index = np.flatnonzero(problem.eligible)
    if not len(index):
        return x
    capacity = problem.beta * problem.bandwidth[index]
    share = capacity / capacity.sum()
    fill = share[:, None] * problem.demand[None, :]
    load = (fill * problem.averaged[index]).sum(axis=1)
    scale = np.where(load > capacity, capacity / np.where(load > 0, load, 1.0), 1.0)
    x[index] = fill * scale[:, None]
    return x


def plan_revenue(x_bar: np.ndarray, problem: ReducedProblem, params: RevenueCurveParams) -> float:
    """Curve revenue of x̄ if the forecast came true."""
    utilization = (x_bar * problem.averaged).sum(axis=1) / problem.bandwidth
    return float(server_revenue_array(utilization, params).sum())


def _floored_plan(forecast, revenue, fleet, params, config, active) -> FractionalStrategy | None:
    problem = reduce_problem(forecast, revenue, fleet, params, Mode.CONSERVATIVE, active)
    try:
        return solve_lp(problem, config.solver, config.max_iterations)
    except LPInfeasibleError:
        return None


def preschedule(
    predicted: RequestMatrix,
    revenue: RevenueMatrix,
    fleet: ServerFleet,
    params: RevenueCurveParams,
    mode: Mode = Mode.CONSERVATIVE,
    config: PreschedulerConfig | None = None,
    active: np.ndarray | None = None,
    cycle: int | None = None,
) -> PreScheduleStrategy:
    """
    Reduce, solve, round and expand. An infeasible LP falls back to
    ``proportional_fill`` and the returned strategy is flagged.
    """
    config = config or PreschedulerConfig()
    started = time.perf_counter()
    forecast = predicted.rounded()
    cycle = forecast.cycle if cycle is None else cycle
    problem = reduce_problem(forecast, revenue, fleet, params, mode, active)

    fallback = False
    try:
        fractional = solve_lp(problem, config.solver, config.max_iterations)
        x_bar, objective = fractional.x, fractional.objective
    except LPInfeasibleError as exc:
        logger.warning("cycle %d: %s; using proportional fill", cycle, exc)
        fallback = True
        x_bar = proportional_fill(problem)
        objective = float((x_bar * problem.averaged / problem.bandwidth[:, None]).sum())

    if problem.mode == Mode.AGGRESSIVE and params.alpha > 0 and config.compare_floor:
        floored = _floored_plan(forecast, revenue, fleet, params, config, active)
        if floored is not None and plan_revenue(floored.x, problem, params) > plan_revenue(x_bar, problem, params) + 1e-9:
            logger.debug("cycle %d: the α-floored plan earns more, keeping it", cycle)
            x_bar, objective, fallback = floored.x, floored.objective, False

    strategy = round_and_expand(x_bar, forecast, config.rounding, config.expansion, cycle)
    elapsed = (time.perf_counter() - started) * 1000
    return PreScheduleStrategy(
        x=strategy.x,
        cycle=cycle,
        fallback=fallback,
        objective=objective,
        solve_ms=elapsed,
        lp_utilization=(x_bar * problem.averaged).sum(axis=1) / problem.bandwidth,
        utilization_slack=utilization_slack(x_bar, strategy.x, revenue, problem.bandwidth),
    )
