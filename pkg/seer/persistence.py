"""Files in and out: run configs, trained models and the CSV/JSON outputs.

Tabular outputs go through pandas with fixed column orders so two runs with
the same config and seed write byte-identical ``metrics.csv`` files. Wall
clock timings are kept out of ``metrics.csv`` and written to ``timing.csv``.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import InvalidConfigError
from .models import CycleMetrics, RevenueMatrix
from .schema import SimulationConfig
from .services.predictor import PredictorParams
from .services.revenue import RevenueModel
from .services.simulation import SimulationResult, SweepPoint, TrainedModels, utilization_cdf
from .services.workload import ClusterModel

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "cycle",
    "total_requests",
    "matched",
    "reallocated",
    "rescheduled",
    "dropped",
    "leftovers",
    "revenue",
    "mean_utilization",
    "withdrawal_events",
    "sla_violations",
    "withdrawal_rate",
    "sla_rate",
    "discarded_servers",
    "active_servers",
    "beta",
    "fallback",
)
STAGES = ("matched", "reallocated", "rescheduled")

CLUSTER_MODEL_FILE = "cluster_model.json"
REVENUE_MODEL_FILE = "revenue_model.json"
PREDICTOR_FILE = "predictor.json"
REVENUE_MATRIX_FILE = "revenue_matrix.csv"


# Config ======================================================================
def load_config(path: str | Path) -> SimulationConfig:
    """Read and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return SimulationConfig.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        raise InvalidConfigError(f"{path}: {where}: {first['msg']}") from exc


def _write_json(data: dict, path: Path):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read {path}: {exc}") from exc


# Run outputs =================================================================
def metrics_frame(metrics: Sequence[CycleMetrics]) -> pd.DataFrame:
    rows = [
        {
            **{name: getattr(row, name) for name in METRIC_COLUMNS if name != "fallback"},
            "fallback": int(row.fallback),
        }
        for row in metrics
    ]
    return pd.DataFrame(rows, columns=list(METRIC_COLUMNS))


def write_metrics(metrics: Sequence[CycleMetrics], path: str | Path):
    metrics_frame(metrics).to_csv(path, index=False)


def write_utilization(metrics: Sequence[CycleMetrics], path: str | Path):
    """Long format: one (cycle, e, utilization) row per server per cycle."""
    rows = [(row.cycle, e, u) for row in metrics for e, u in enumerate(row.utilization, start=1)]
    pd.DataFrame(rows, columns=["cycle", "e", "utilization"]).to_csv(path, index=False)


def write_timing(metrics: Sequence[CycleMetrics], path: str | Path):
    rows = [(row.cycle, row.preschedule_ms, row.in_cycle_ms) for row in metrics]
    pd.DataFrame(rows, columns=["cycle", "preschedule_ms", "in_cycle_ms"]).to_csv(path, index=False)


def write_strategies(result: SimulationResult, path: str | Path):
    """Non-zero planned counts, 1-based indices."""
    rows = []
    for strategy in result.strategies:
        for (e, m, i), count in _nonzero(strategy.x):
            rows.append((strategy.cycle, e, m, i, count))
    pd.DataFrame(rows, columns=["cycle", "e", "m", "i", "count"]).to_csv(path, index=False)


def write_assignments(result: SimulationResult, path: str | Path):
    """Non-zero placements per stage, 1-based indices."""
    rows = []
    for cycle, assignment in result.assignments:
        for stage in STAGES:
            for (e, m, i), count in _nonzero(getattr(assignment, stage)):
                rows.append((cycle, e, m, i, count, stage))
    pd.DataFrame(rows, columns=["cycle", "e", "m", "i", "count", "stage"]).to_csv(path, index=False)


def _nonzero(tensor):
    return [((int(e) + 1, int(m) + 1, int(i) + 1), int(tensor[e, m, i])) for e, m, i in np.argwhere(tensor)]


def write_run(result: SimulationResult, output_dir: str | Path, dump_schedules: bool = False) -> list[Path]:
    """Write every output of one run into ``output_dir``; returns the paths written."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv", out / "utilization.csv", out / "timing.csv", out / "utilization_cdf.csv"]
    write_metrics(result.metrics, written[0])
    write_utilization(result.metrics, written[1])
    write_timing(result.metrics, written[2])
    pd.DataFrame(utilization_cdf(result), columns=["percentile", "value"]).to_csv(written[3], index=False)
    _write_json(result.summary, out / "summary.json")
    written.append(out / "summary.json")
    if dump_schedules:
        if result.strategies:
            write_strategies(result, out / "strategy.csv")
            written.append(out / "strategy.csv")
        write_assignments(result, out / "assignment.csv")
        written.append(out / "assignment.csv")
    logger.info("wrote %d files to %s", len(written), out)
    return written


# Experiments and analysis ====================================================
def write_sweep(points: Iterable[SweepPoint], path: str | Path):
    rows = [(p.alpha, p.beta, p.mode.value, p.mean_revenue) for p in points]
    pd.DataFrame(rows, columns=["alpha", "beta", "mode", "mean_revenue"]).to_csv(path, index=False)


def write_comparison(rows: Sequence[dict], path: str | Path):
    pd.DataFrame(list(rows)).to_csv(path, index=False)


def write_acf(values: Sequence[float], path: str | Path):
    pd.DataFrame({"lag": range(len(values)), "value": list(values)}).to_csv(path, index=False)


def write_spatial_correlation(pairs: Sequence[tuple[int, int, float]], path: str | Path):
    pd.DataFrame(list(pairs), columns=["loc_i", "loc_j", "rho"]).to_csv(path, index=False)


# Models ======================================================================
def write_revenue_matrix(revenue: RevenueMatrix, path: str | Path):
    """A[e, m, i] in long format with 1-based indices."""
    values = revenue.values
    rows = [
        (e + 1, m + 1, i + 1, float(values[e, m, i]))
        for e in range(values.shape[0])
        for m in range(values.shape[1])
        for i in range(values.shape[2])
    ]
    pd.DataFrame(rows, columns=["e", "m", "i", "value"]).to_csv(path, index=False)


def save_models(models: TrainedModels, revenue: RevenueMatrix, output_dir: str | Path) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / CLUSTER_MODEL_FILE, out / REVENUE_MODEL_FILE]
    _write_json(models.cluster_model.to_dict(), written[0])
    _write_json(models.revenue_model.to_dict(), written[1])
    if models.predictor is not None:
        written.append(out / PREDICTOR_FILE)
        _write_json(models.predictor.to_dict(), written[-1])
    written.append(out / REVENUE_MATRIX_FILE)
    write_revenue_matrix(revenue, written[-1])
    return written


def load_models(model_dir: str | Path) -> TrainedModels:
    """Inverse of ``save_models``; the predictor file is optional."""
    model_dir = Path(model_dir)
    for name in (CLUSTER_MODEL_FILE, REVENUE_MODEL_FILE):
        if not (model_dir / name).is_file():
            raise InvalidConfigError(f"{model_dir} has no {name}; run `seer train` first")
    predictor = None
    if (model_dir / PREDICTOR_FILE).is_file():
        predictor = PredictorParams.from_dict(_read_json(model_dir / PREDICTOR_FILE))
    return TrainedModels(
        cluster_model=ClusterModel.from_dict(_read_json(model_dir / CLUSTER_MODEL_FILE)),
        revenue_model=RevenueModel.from_dict(_read_json(model_dir / REVENUE_MODEL_FILE)),
        predictor=predictor,
    )
