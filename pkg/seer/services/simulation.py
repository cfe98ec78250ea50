"""
Cycle-driven simulation of one scheduler over a synthetic workload.

``build_context`` trains the shared models once on the first
``training_cycles`` cycles of the workload: the fleet, the request
categories, the revenue matrix A and the demand forecaster. The evaluated
cycles follow the training cycles, so the forecaster always starts from a
full history.

For Seer each evaluated cycle t runs the PER loop:

1. publish PS_t, planned while cycle t-1 was executing;
2. realise the actual demand of cycle t and hand a snapshot (history up to
   t, β in force, active servers) to the planner for cycle t+1;
3. match, reschedule, then filter (aggressive mode);
4. sample QoS for every active server and record the metrics.

Baselines skip planning and run their single-shot scheduler. Every
``beta_update_interval`` cycles β is re-estimated from the accumulated QoS
samples; the new value is used from the next plan on, for every scheduler.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from pydantic import ValidationError

from seer.background import StrategyHandoff
from seer.errors import InvalidConfigError, SeerError, SimulationError
from seer.models import (
    CycleMetrics,
    FleetState,
    Mode,
    PreScheduleStrategy,
    RequestMatrix,
    RevenueCurveParams,
    RevenueMatrix,
    ScheduleAssignment,
    ServerFleet,
)
from seer.rng import substream
from seer.schema import SCHEDULERS, SimulationConfig
from seer.services.analysis import empirical_cdf
from seer.services.baselines import BASELINES, CycleScheduler, MaxFlowScheduler
from seer.services.predictor import (
    AeGruForecaster,
    OracleForecaster,
    PredictorParams,
    SeasonalNaiveForecaster,
    train_predictor,
)
from seer.services.prescheduler import preschedule
from seer.services.qos import qos_samples
from seer.services.revenue import (
    RevenueModel,
    ThroughputProfile,
    build_fleet,
    build_revenue_matrix,
    estimate_beta,
    revenue_samples,
    server_revenue_array,
    train_revenue_model,
)
from seer.services.scheduler import execute_cycle, fleet_state
from seer.services.workload import (
    ClusterModel,
    aggregate_matrix,
    cycle_matrices,
    fit_clusters,
    synthesize_cycle,
    synthesize_trace,
)

logger = logging.getLogger(__name__)

DEFAULT_COMPARISON = ("seer-conservative", "seer-aggressive", "origin", "gp", "greedy", "maxflow")


@dataclass(frozen=True, eq=False)
class TrainedModels:
    cluster_model: ClusterModel
    revenue_model: RevenueModel
    predictor: PredictorParams | None = None


@dataclass(eq=False)
class SimulationContext:
    """Everything a run needs that does not depend on the scheduler or the thresholds."""

    config: SimulationConfig
    fleet: ServerFleet
    models: TrainedModels
    revenue: RevenueMatrix
    training: list[RequestMatrix]

    @property
    def cluster_model(self) -> ClusterModel:
        return self.models.cluster_model

    @property
    def categories(self) -> int:
        return self.models.cluster_model.k


@dataclass(eq=False)
class SimulationResult:
    config: SimulationConfig
    metrics: list[CycleMetrics]
    summary: dict
    strategies: list[PreScheduleStrategy] = field(default_factory=list)
    assignments: list[tuple[int, ScheduleAssignment]] = field(default_factory=list)

    def utilization_samples(self) -> np.ndarray:
        """Per-server utilizations of every cycle, withdrawn servers excluded."""
        samples = []
        for row in self.metrics:
            values = np.asarray(row.utilization, dtype=float)
            withdrawn = row.extra.get("withdrawn", ())
            if withdrawn:
                keep = np.ones(len(values), dtype=bool)
                keep[np.asarray(withdrawn) - 1] = False
                values = values[keep]
            samples.append(values)
        return np.concatenate(samples) if samples else np.zeros(0)


# -- context -----------------------------------------------------------------


def build_context(config: SimulationConfig, models: TrainedModels | None = None) -> SimulationContext:
    """Train (or adopt) the shared models on the training cycles."""
    workload = config.workload
    kind = config.predictor.kind
    if kind == "seasonal" and config.training_cycles < config.predictor.period:
        raise InvalidConfigError(
            f"seasonal forecasting needs training_cycles >= period ({config.predictor.period})"
        )
    fleet = build_fleet(config.fleet, workload.locations, config.seed)
    trace = synthesize_trace(workload, config.seed, cycles=config.training_cycles)
    logger.info("training on %d requests over %d cycles", len(trace), config.training_cycles)

    if models is None:
        cluster_model = fit_clusters(trace, config.clusters, config.seed, workload.bitrate_levels)
        training = cycle_matrices(trace, cluster_model, 0, config.training_cycles)
        profile = ThroughputProfile.for_fleet(fleet, config.seed)
        features, labels = revenue_samples(
            trace, cluster_model.categorize(trace), fleet, profile, config.revenue_model.samples, config.seed
        )
        revenue_model = train_revenue_model(features, labels, config.revenue_model, config.seed)
        predictor = train_predictor(training, config.predictor, config.seed) if kind == "aegru" else None
        models = TrainedModels(cluster_model, revenue_model, predictor)
    else:
        training = cycle_matrices(trace, models.cluster_model, 0, config.training_cycles)
        if kind == "aegru" and models.predictor is None:
            raise InvalidConfigError("stored models carry no predictor for kind 'aegru'")
        if models.predictor is not None and (models.predictor.locations, models.predictor.categories) != (
            workload.locations,
            models.cluster_model.k,
        ):
            raise InvalidConfigError("stored predictor does not match the workload shape")

    revenue = build_revenue_matrix(models.revenue_model, fleet, workload.locations, models.cluster_model.k)
    return SimulationContext(config, fleet, models, revenue, training)


class DemandFeed:
    """Realised demand matrices of evaluated cycles, regenerated from the workload stream."""

    def __init__(self, config: SimulationConfig, cluster_model: ClusterModel):
        self.config = config
        self.cluster_model = cluster_model
        self._cache: dict[int, RequestMatrix] = {}

    def __call__(self, cycle: int) -> RequestMatrix:
        matrix = self._cache.get(cycle)
        if matrix is None:
            requests = synthesize_cycle(self.config.workload, self.config.seed, cycle)
            matrix = aggregate_matrix(requests, self.cluster_model, self.config.workload.locations, cycle=cycle)
            self._cache[cycle] = matrix
        return matrix

    def release(self, cycle: int):
        self._cache.pop(cycle, None)


def make_forecaster(config: SimulationConfig, context: SimulationContext, feed: Callable[[int], RequestMatrix]):
    kind = config.predictor.kind
    if kind == "aegru":
        if context.models.predictor is None:
            raise InvalidConfigError("no trained predictor in the context")
        return AeGruForecaster(context.models.predictor)
    if kind == "seasonal":
        return SeasonalNaiveForecaster(config.predictor.period)
    return OracleForecaster(feed)


def make_scheduler(config: SimulationConfig) -> CycleScheduler:
    if config.scheduler == "maxflow":
        return MaxFlowScheduler(config.maxflow_capacity)
    return BASELINES[config.scheduler]()


# -- one run -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlanningSnapshot:
    """Immutable planner input: demand history tail, thresholds in force, active servers."""

    history: tuple[RequestMatrix, ...]
    params: RevenueCurveParams
    active: np.ndarray


def _plan(config, context, forecaster, snapshot: PlanningSnapshot, cycle: int):
    started = time.perf_counter()
    predicted = forecaster.forecast(snapshot.history, cycle)
    strategy = preschedule(
        predicted,
        context.revenue,
        context.fleet,
        snapshot.params,
        config.mode,
        config.prescheduler,
        snapshot.active,
        cycle,
    )
    return strategy, (time.perf_counter() - started) * 1000


def cycle_metrics(
    cycle: int,
    actual: RequestMatrix,
    assignment: ScheduleAssignment,
    state: FleetState,
    params: RevenueCurveParams,
    active: np.ndarray,
    fallback: bool = False,
    preschedule_ms: float = 0.0,
    in_cycle_ms: float = 0.0,
) -> CycleMetrics:
    """Reduce one cycle's final state to its metrics row."""
    utilization = state.utilization
    live = utilization[active]
    extra = {}
    if not active.all():
        extra["withdrawn"] = tuple(int(e) + 1 for e in np.flatnonzero(~active))
    return CycleMetrics(
        cycle=cycle,
        utilization=tuple(float(u) for u in utilization),
        revenue=float(server_revenue_array(live, params).sum()),
        mean_utilization=float(live.mean()) if len(live) else 0.0,
        withdrawal_events=int((live < params.alpha).sum()),
        sla_violations=int((live > params.beta).sum()),
        active_servers=int(active.sum()),
        total_requests=int(round(actual.total)),
        matched=int(assignment.matched.sum()),
        reallocated=int(assignment.reallocated.sum()),
        rescheduled=int(assignment.rescheduled.sum()),
        dropped=assignment.dropped_total,
        leftovers=assignment.leftover_total,
        discarded_servers=int(assignment.discarded.sum()),
        beta=params.beta,
        fallback=fallback,
        preschedule_ms=preschedule_ms,
        in_cycle_ms=in_cycle_ms,
        extra=extra,
    )


def summarize(config: SimulationConfig, metrics: Sequence[CycleMetrics]) -> dict:
    """Run-level aggregates. An empty run yields zeros."""
    summary = {
        "scheduler": config.scheduler,
        "mode": Mode(config.mode).value,
        "seed": config.seed,
        "cycles": len(metrics),
        "total_requests": 0,
        "total_revenue": 0.0,
        "mean_revenue": 0.0,
        "mean_utilization": 0.0,
        "withdrawal_events": 0,
        "sla_violations": 0,
        "withdrawal_frequency": 0.0,
        "sla_frequency": 0.0,
        "dropped": 0,
        "leftovers": 0,
        "fallback_cycles": 0,
        "withdrawn_servers": 0,
        "final_beta": config.thresholds.beta,
        "median_preschedule_ms": 0.0,
        "median_in_cycle_ms": 0.0,
    }
    if not metrics:
        return summary
    total_revenue = 0.0
    for row in metrics:
        total_revenue += row.revenue
    summary.update(
        total_requests=sum(row.total_requests for row in metrics),
        total_revenue=total_revenue,
        mean_revenue=total_revenue / len(metrics),
        mean_utilization=float(np.mean([row.mean_utilization for row in metrics])),
        withdrawal_events=sum(row.withdrawal_events for row in metrics),
        sla_violations=sum(row.sla_violations for row in metrics),
        withdrawal_frequency=float(np.mean([row.withdrawal_rate for row in metrics])),
        sla_frequency=float(np.mean([row.sla_rate for row in metrics])),
        dropped=sum(row.dropped for row in metrics),
        leftovers=sum(row.leftovers for row in metrics),
        fallback_cycles=sum(1 for row in metrics if row.fallback),
        withdrawn_servers=len(metrics[-1].extra.get("withdrawn", ())),
        final_beta=metrics[-1].beta,
        median_preschedule_ms=float(np.median([row.preschedule_ms for row in metrics])),
        median_in_cycle_ms=float(np.median([row.in_cycle_ms for row in metrics])),
    )
    return summary


def run_simulation(
    config: SimulationConfig,
    context: SimulationContext | None = None,
    keep_schedules: bool = False,
) -> SimulationResult:
    """
    Simulate ``config.horizon`` cycles with ``config.scheduler``.

    ``context`` lets several runs share trained models; it must come from a
    config with the same fleet, workload and seed. With ``keep_schedules``
    Seer's strategies and every cycle's assignment are kept on the result.
    """
    if config.horizon == 0:
        return SimulationResult(config, [], summarize(config, []))
    context = context or build_context(config)
    fleet, revenue = context.fleet, context.revenue
    seer = config.scheduler == "seer"
    start = config.training_cycles
    logger.info(
        "simulating %d cycles with %s (%s), seed %d",
        config.horizon, config.scheduler, Mode(config.mode).value, config.seed,
    )

    feed = DemandFeed(config, context.cluster_model)
    forecaster = make_forecaster(config, context, feed) if seer else None
    baseline = None if seer else make_scheduler(config)
    tail = max(config.predictor.window, config.predictor.period)
    history = list(context.training)
    params = config.thresholds.curve()
    active = fleet.active.copy()
    streak = np.zeros(fleet.size, dtype=np.int64)
    qos_history: list[np.ndarray] = []
    metrics: list[CycleMetrics] = []
    result = SimulationResult(config, metrics, {})
    handoff = StrategyHandoff(threaded=config.overlap)

    # planner input for cycle t is taken once cycle t-1's demand is realised
    snapshot = PlanningSnapshot(tuple(history[-tail:]), params, active.copy())
    overlap = seer and not config.inline
    try:
        if overlap:
            handoff.submit(start, _plan, config, context, forecaster, snapshot, start)
        for t in range(config.horizon):
            cycle = start + t
            try:
                strategy, plan_ms = None, 0.0
                if overlap:
                    strategy, plan_ms = handoff.collect(cycle)

                actual = feed(cycle)
                history.append(actual)
                previous = snapshot
                snapshot = PlanningSnapshot(tuple(history[-tail:]), params, active.copy())
                if overlap and t + 1 < config.horizon:
                    handoff.submit(cycle + 1, _plan, config, context, forecaster, snapshot, cycle + 1)

                started = time.perf_counter()
                if seer:
                    if config.inline:
                        strategy, plan_ms = _plan(config, context, forecaster, previous, cycle)
                    assignment, state = execute_cycle(actual, strategy, fleet, revenue, params, config.mode, active)
                else:
                    assignment = baseline.schedule(actual, fleet, revenue, params, active)
                    state = fleet_state(fleet, assignment, revenue, active)
                in_cycle_ms = (time.perf_counter() - started) * 1000
            except SeerError as exc:
                raise SimulationError(cycle, exc) from exc

            row = cycle_metrics(
                cycle, actual, assignment, state, params, active,
                fallback=bool(strategy is not None and strategy.fallback),
                preschedule_ms=plan_ms,
                in_cycle_ms=in_cycle_ms,
            )
            metrics.append(row)
            if keep_schedules:
                if strategy is not None:
                    result.strategies.append(strategy)
                result.assignments.append((cycle, assignment))
            feed.release(cycle)

            utilization = state.utilization[active]
            latency, error = qos_samples(utilization, config.qos, substream(config.seed, "qos", cycle))
            qos_history.append(np.column_stack([utilization, latency, error]))

            if config.beta_update_interval and (t + 1) % config.beta_update_interval == 0:
                beta = estimate_beta(np.concatenate(qos_history), params.alpha, config.beta_bounds)
                if beta != params.beta:
                    logger.warning("cycle %d: β updated %.4f -> %.4f", cycle, params.beta, beta)
                    params = params.with_beta(beta)

            if config.withdrawal_after:
                below = active & (state.utilization < params.alpha)
                streak = np.where(below, streak + 1, 0)
                leaving = active & (streak >= config.withdrawal_after)
                if leaving.any():
                    logger.warning(
                        "cycle %d: servers %s withdrawn after %d cycles below α",
                        cycle, (np.flatnonzero(leaving) + 1).tolist(), config.withdrawal_after,
                    )
                    active = active & ~leaving
    finally:
        handoff.close()

    result.summary = summarize(config, metrics)
    logger.info(
        "finished: mean revenue %.4f, mean utilization %.4f, %d dropped",
        result.summary["mean_revenue"], result.summary["mean_utilization"], result.summary["dropped"],
    )
    return result


# -- experiments --------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    alpha: float
    beta: float
    mode: Mode
    mean_revenue: float


def _revalidated(config: SimulationConfig, **changes) -> SimulationConfig:
    """``config`` with ``changes`` applied, run through validation again."""
    try:
        return SimulationConfig.model_validate({**config.model_dump(), **changes})
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        raise InvalidConfigError(f"{where}: {first['msg']}") from exc


def sweep_thresholds(
    config: SimulationConfig,
    alphas: Sequence[float],
    betas: Sequence[float],
    context: SimulationContext | None = None,
    modes: Sequence[Mode] = (Mode.CONSERVATIVE, Mode.AGGRESSIVE),
) -> list[SweepPoint]:
    """
    Mean Seer revenue over an (α, β) grid, both modes per point. Pairs with
    α >= β are skipped and β stays fixed within each run.
    """
    if not len(alphas) or not len(betas):
        raise InvalidConfigError("sweep grids must not be empty")
    for value in (*alphas, *betas):
        if not 0 <= value <= 1:
            raise InvalidConfigError(f"sweep grid value {value} outside [0, 1]")
    pairs = [(a, b) for a in alphas for b in betas if a < b]
    if not pairs:
        raise InvalidConfigError("no grid point satisfies alpha < beta")

    context = context or build_context(config)
    points = []
    for alpha, beta in pairs:
        thresholds = {"alpha": alpha, "beta": beta, "gamma_factor": config.thresholds.gamma_factor}
        for mode in modes:
            run = _revalidated(
                config, thresholds=thresholds, mode=Mode(mode), scheduler="seer", beta_update_interval=0
            )
            summary = run_simulation(run, context).summary
            points.append(SweepPoint(alpha, beta, Mode(mode), summary["mean_revenue"]))
            logger.info("sweep α=%.3f β=%.3f %s: %.5f", alpha, beta, Mode(mode).value, summary["mean_revenue"])
    return points


def _variant(config: SimulationConfig, name: str) -> SimulationConfig:
    scheduler, _, mode = name.partition("-")
    if scheduler not in SCHEDULERS or (mode and scheduler != "seer"):
        raise InvalidConfigError(f"unknown scheduler {name!r}")
    update = {"scheduler": scheduler}
    if mode:
        try:
            update["mode"] = Mode(mode)
        except ValueError as exc:
            raise InvalidConfigError(f"unknown mode in {name!r}") from exc
    return _revalidated(config, **update)


def compare_schedulers(
    config: SimulationConfig,
    names: Sequence[str] = DEFAULT_COMPARISON,
    context: SimulationContext | None = None,
) -> list[dict]:
    """One summary row per scheduler, all runs on the same trained context."""
    variants = [(name, _variant(config, name)) for name in names]
    context = context or build_context(config)
    rows = []
    for name, run in variants:
        summary = run_simulation(run, context).summary
        rows.append(
            {
                "name": name,
                "mean_revenue": summary["mean_revenue"],
                "mean_utilization": summary["mean_utilization"],
                "withdrawal_frequency": summary["withdrawal_frequency"],
                "sla_frequency": summary["sla_frequency"],
                "dropped": summary["dropped"],
                "median_preschedule_ms": summary["median_preschedule_ms"],
                "median_in_cycle_ms": summary["median_in_cycle_ms"],
            }
        )
    return rows


def utilization_cdf(result: SimulationResult, percentiles: Sequence[int] = tuple(range(1, 101))) -> list[tuple[int, float]]:
    """(percentile, utilization) pairs of the run's server-utilization distribution."""
    samples = result.utilization_samples()
    if not len(samples):
        return []
    cdf = empirical_cdf(samples)
    return [(p, cdf.query(p)) for p in percentiles]
