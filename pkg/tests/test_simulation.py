"""Simulation runs on the tiny config.

Most tests share the session-scoped ``tiny_context`` so the models are trained
once; configs passed alongside it keep the fleet, workload and seed of
``tiny_config``.
"""

import numpy as np
import pytest

from seer.errors import InvalidConfigError, LPSolverError, SimulationError
from seer.models import Mode, RevenueCurveParams
from seer.services.revenue import server_revenue_array
from seer.services.simulation import (
    build_context,
    compare_schedulers,
    run_simulation,
    summarize,
    sweep_thresholds,
    utilization_cdf,
)


def untimed(result):
    """Metric rows with the wall-clock fields dropped."""
    return [
        (row.cycle, row.utilization, row.revenue, row.matched, row.reallocated, row.rescheduled,
         row.dropped, row.leftovers, row.beta, row.fallback)
        for row in result.metrics
    ]


class TestRun:
    def test_zero_horizon(self, make_config):
        result = run_simulation(make_config(horizon=0))
        assert result.metrics == []
        assert result.summary["cycles"] == 0
        assert result.summary["mean_revenue"] == 0.0
        assert utilization_cdf(result) == []

    def test_one_row_per_cycle(self, tiny_config, tiny_context):
        result = run_simulation(tiny_config, tiny_context)
        assert [row.cycle for row in result.metrics] == list(range(40, 52))
        assert result.summary["cycles"] == 12

    def test_deterministic(self, tiny_config, tiny_context):
        a = run_simulation(tiny_config, tiny_context)
        b = run_simulation(tiny_config, tiny_context)
        assert untimed(a) == untimed(b)

    def test_fresh_context_matches_shared_one(self, tiny_config, tiny_context):
        shared = run_simulation(tiny_config, tiny_context)
        fresh = run_simulation(tiny_config)
        assert untimed(shared) == untimed(fresh)

    @pytest.mark.parametrize("mode", [Mode.CONSERVATIVE, Mode.AGGRESSIVE])
    def test_every_request_is_accounted_for(self, make_config, tiny_context, mode):
        result = run_simulation(make_config(mode=mode), tiny_context)
        for row in result.metrics:
            assert row.matched + row.reallocated + row.rescheduled + row.dropped == row.total_requests
            assert max(row.utilization) <= 1 + 1e-9

    def test_revenue_is_the_sum_over_active_servers(self, tiny_config, tiny_context):
        result = run_simulation(tiny_config, tiny_context)
        thresholds = tiny_config.thresholds
        for row in result.metrics:
            params = RevenueCurveParams(thresholds.alpha, row.beta, thresholds.gamma_factor)
            expected = server_revenue_array(np.asarray(row.utilization), params).sum()
            assert row.revenue == pytest.approx(expected)
            u = np.asarray(row.utilization)
            assert row.withdrawal_events == int((u < params.alpha).sum())
            assert row.sla_violations == int((u > params.beta).sum())

    @pytest.mark.parametrize("overlap", [True, False])
    def test_threaded_and_inline_planning_agree(self, make_config, tiny_context, overlap):
        planned = run_simulation(make_config(overlap=overlap), tiny_context)
        inline = run_simulation(make_config(inline=True), tiny_context)
        assert untimed(planned) == untimed(inline)

    def test_perfect_prediction_leaves_no_leftovers(self, make_config, tiny_context):
        config = make_config(
            predictor={"kind": "oracle"},
            prescheduler={"rounding": "conserving", "expansion": "category"},
        )
        result = run_simulation(config, tiny_context, keep_schedules=True)
        assert len(result.strategies) == 12
        for row in result.metrics:
            if not row.fallback and max(row.utilization) < 1 - 1e-6:
                assert row.leftovers == 0

    def test_planned_counts_match_the_forecast_under_conserving_rounding(self, make_config, tiny_context):
        config = make_config(
            predictor={"kind": "oracle"},
            prescheduler={"rounding": "conserving", "expansion": "category"},
        )
        result = run_simulation(config, tiny_context, keep_schedules=True)
        for strategy, row in zip(result.strategies, result.metrics):
            assert strategy.cycle == row.cycle
            if not strategy.fallback:
                assert strategy.x.sum() == row.total_requests

    def test_keep_schedules(self, make_config, tiny_context):
        result = run_simulation(make_config(scheduler="gp"), tiny_context, keep_schedules=True)
        assert result.strategies == []
        assert [cycle for cycle, _ in result.assignments] == list(range(40, 52))

    def test_beta_updates_stay_within_bounds(self, make_config, tiny_context):
        result = run_simulation(make_config(beta_update_interval=2), tiny_context)
        low, high = 0.7, 0.9
        assert all(low <= row.beta <= high for row in result.metrics)
        assert result.summary["final_beta"] == result.metrics[-1].beta


class TestWithdrawal:
    def test_idle_servers_leave_and_get_nothing(self, make_config):
        # Load stays far below α on every server.
        config = make_config(
            scheduler="greedy",
            withdrawal_after=2,
            beta_update_interval=0,
            fleet={"bandwidths": [60000.0] * 4},
        )
        result = run_simulation(config)
        first, second, *rest = result.metrics
        assert first.active_servers == second.active_servers == 4
        assert "withdrawn" not in second.extra
        for row in rest:
            assert row.active_servers == 0
            assert row.extra["withdrawn"] == (1, 2, 3, 4)
            assert row.dropped == row.total_requests
            assert row.revenue == 0.0
        assert result.summary["withdrawn_servers"] == 4
        assert len(result.utilization_samples()) == 8

    def test_disabled_by_default(self, tiny_config, tiny_context):
        result = run_simulation(tiny_config, tiny_context)
        assert all(row.active_servers == 4 for row in result.metrics)


class TestErrors:
    def test_module_errors_carry_the_cycle(self, tiny_config, tiny_context, mocker):
        mocker.patch("seer.services.simulation.execute_cycle", side_effect=LPSolverError("stuck"))
        with pytest.raises(SimulationError) as info:
            run_simulation(tiny_config.model_copy(update={"inline": True}), tiny_context)
        assert info.value.cycle == 40
        assert isinstance(info.value.cause, LPSolverError)
        assert "cycle 40" in str(info.value)

    def test_seasonal_needs_a_full_period_of_history(self, make_config):
        with pytest.raises(InvalidConfigError, match="seasonal"):
            build_context(make_config(training_cycles=10, predictor={"period": 20}))

    def test_stored_models_without_predictor(self, make_config, tiny_context):
        with pytest.raises(InvalidConfigError, match="aegru"):
            build_context(make_config(predictor={"kind": "aegru"}), tiny_context.models)


class TestSummary:
    def test_empty(self, tiny_config):
        summary = summarize(tiny_config, [])
        assert summary["cycles"] == 0
        assert summary["final_beta"] == tiny_config.thresholds.beta
        assert summary["scheduler"] == "seer"

    def test_aggregates(self, tiny_config, tiny_context):
        result = run_simulation(tiny_config, tiny_context)
        summary = result.summary
        assert summary["total_revenue"] == pytest.approx(sum(row.revenue for row in result.metrics))
        assert summary["mean_revenue"] == pytest.approx(summary["total_revenue"] / 12)
        assert summary["total_requests"] == sum(row.total_requests for row in result.metrics)

    def test_utilization_cdf(self, tiny_config, tiny_context):
        result = run_simulation(tiny_config, tiny_context)
        cdf = utilization_cdf(result)
        assert [p for p, _ in cdf] == list(range(1, 101))
        values = [v for _, v in cdf]
        assert values == sorted(values)
        assert values[-1] == pytest.approx(result.utilization_samples().max())


class TestExperiments:
    def test_sweep_at_zero_alpha_modes_agree(self, tiny_config, tiny_context):
        points = sweep_thresholds(tiny_config, [0.0], [0.8], tiny_context)
        assert [p.mode for p in points] == [Mode.CONSERVATIVE, Mode.AGGRESSIVE]
        assert points[0].mean_revenue == pytest.approx(points[1].mean_revenue)

    def test_aggressive_earns_at_least_conservative(self, tiny_config, tiny_context):
        alphas, betas = [0.0, 0.1, 0.2, 0.3], [0.6, 0.8, 0.9]
        points = sweep_thresholds(tiny_config, alphas, betas, tiny_context)
        revenue = {(p.alpha, p.beta, p.mode): p.mean_revenue for p in points}
        for alpha in alphas[1:]:
            for beta in betas:
                assert revenue[alpha, beta, Mode.AGGRESSIVE] >= revenue[alpha, beta, Mode.CONSERVATIVE] - 1e-9

        inversions = 0
        for mode in Mode:
            for alpha in alphas:
                steps = zip(betas, betas[1:])
                inversions += sum(revenue[alpha, b, mode] < revenue[alpha, a, mode] - 1e-9 for a, b in steps)
        for beta in betas:
            steps = zip(alphas, alphas[1:])
            inversions += sum(
                revenue[b, beta, Mode.CONSERVATIVE] > revenue[a, beta, Mode.CONSERVATIVE] + 1e-9 for a, b in steps
            )
        assert inversions <= len(points) // 10

    def test_sweep_revalidates_each_run(self, tiny_config, tiny_context):
        broken = tiny_config.model_copy(update={"horizon": 10**6})
        with pytest.raises(InvalidConfigError, match="workload horizon"):
            sweep_thresholds(broken, [0.1], [0.8], tiny_context)

    def test_compare_revalidates_each_variant(self, tiny_config, tiny_context):
        broken = tiny_config.model_copy(update={"beta_bounds": (0.9, 0.5)})
        with pytest.raises(InvalidConfigError, match="beta_bounds"):
            compare_schedulers(broken, ["gp"], tiny_context)

    def test_sweep_skips_unordered_pairs(self, tiny_config, tiny_context):
        points = sweep_thresholds(tiny_config, [0.05, 0.9], [0.8], tiny_context, modes=[Mode.CONSERVATIVE])
        assert [(p.alpha, p.beta) for p in points] == [(0.05, 0.8)]

    @pytest.mark.parametrize("alphas, betas", [([], [0.8]), ([0.9], [0.8]), ([1.5], [0.8])])
    def test_sweep_grid_errors(self, tiny_config, tiny_context, alphas, betas):
        with pytest.raises(InvalidConfigError):
            sweep_thresholds(tiny_config, alphas, betas, tiny_context)

    def test_compare_rows(self, tiny_config, tiny_context):
        rows = compare_schedulers(tiny_config, ["seer-aggressive", "gp", "maxflow"], tiny_context)
        assert [row["name"] for row in rows] == ["seer-aggressive", "gp", "maxflow"]
        assert all(row["mean_revenue"] >= 0 for row in rows)

    @pytest.mark.parametrize("name", ["fifo", "gp-aggressive", "seer-bold"])
    def test_compare_unknown_scheduler(self, tiny_config, tiny_context, name):
        with pytest.raises(InvalidConfigError):
            compare_schedulers(tiny_config, [name], tiny_context)
