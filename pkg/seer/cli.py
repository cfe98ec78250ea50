"""Seer - revenue-aware live-streaming scheduler simulator."""

# Python Modules
import functools
import logging
from pathlib import Path

# PIP Modules
import click
from pydantic import ValidationError
from rich import print as rprint
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

# Local modules
from config import Config

from .errors import SeerError
from .grid import parse_grid
from .models import Mode
from .persistence import (
    load_config,
    load_models,
    save_models,
    write_acf,
    write_comparison,
    write_run,
    write_spatial_correlation,
    write_sweep,
)
from .schema import SCHEDULERS, SimulationConfig
from .services.analysis import acf, location_series, per_cycle_totals, spatial_correlation
from .services.simulation import (
    DEFAULT_COMPARISON,
    build_context,
    compare_schedulers,
    run_simulation,
    sweep_thresholds,
)
from .services.workload import load_trace, synthesize_trace, write_trace

# Global settings for click
CONTEXT_SETTINGS = {"help_option_names": ["-h", "--help"]}


def configure_logging(level):
    """Route all package logging through one RichHandler on stderr."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_seer", False):
            root.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, markup=False)
    handler._seer = True  # pylint: disable=protected-access
    root.addHandler(handler)
    root.setLevel(level)


def _verbose(_ctx, _param, value):
    configure_logging(logging.DEBUG if value else Config.LOG_LEVEL)
    return value


verbose_option = click.option(
    "-v",
    "--verbose",
    is_flag=True,
    expose_value=False,
    is_eager=True,
    callback=_verbose,
    help="Log at DEBUG level (includes the simplex trace).",
)
config_option = click.option(
    "-c",
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="JSON run configuration.",
)
output_option = click.option(
    "-o", "--output", type=click.Path(file_okay=False), help="Output directory."
)


def handle_errors(func):
    """Turn deliberate failures into a one-line diagnostic and exit code 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(part) for part in first["loc"]) or "config"
            raise click.ClickException(f"invalid configuration: {where}: {first['msg']}") from exc
        except SeerError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _grid(_ctx, param, value):
    try:
        return parse_grid(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param=param) from exc


def _load(config_path, **overrides) -> SimulationConfig:
    """Load the JSON config and apply the CLI overrides that were given.

    A dict override is merged into the nested section of the same name.
    """
    config = load_config(config_path)
    data = config.model_dump()
    update = {}
    for key, value in overrides.items():
        if isinstance(value, dict):
            value = {k: v for k, v in value.items() if v is not None}
            if value:
                update[key] = {**data[key], **value}
        elif value is not None:
            update[key] = value
    if not Config.OVERLAP:
        update["overlap"] = False
    if not update:
        return config
    return SimulationConfig.model_validate({**data, **update})


def _output_dir(output, config: SimulationConfig) -> Path:
    return Path(output or config.output_dir or Config.OUTPUT_DIR)


def _summary_table(title: str, rows: list[dict]) -> Table:
    table = Table(title=title)
    for column in rows[0]:
        table.add_column(column, justify="left" if column == "name" else "right")
    for row in rows:
        table.add_row(*(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row.values()))
    return table


# Commands ====================================================================
@click.group(context_settings=CONTEXT_SETTINGS)
def cli():
    """Seer - revenue-aware live-streaming scheduler simulator"""


@cli.command(context_settings=CONTEXT_SETTINGS)
@config_option
@click.option("--scheduler", type=click.Choice(SCHEDULERS), help="Override the configured scheduler.")
@click.option("--mode", type=click.Choice([m.value for m in Mode]), help="Seer operating mode.")
@click.option("--seed", type=int, help="Override the root seed.")
@click.option("--inline", is_flag=True, help="Solve the LP inside the cycle (timing diagnostic).")
@output_option
@click.option("--models", "model_dir", type=click.Path(exists=True, file_okay=False), help="Reuse `seer train` output.")
@click.option("--dump-schedules", is_flag=True, help="Also write strategy.csv and assignment.csv.")
@verbose_option
@handle_errors
def run(config_path, scheduler, mode, seed, inline, output, model_dir, dump_schedules):
    """Simulate one scheduler over the configured horizon

    For example:

        ./run.py run -c example_config.json --scheduler maxflow -o out/maxflow
    """
    config = _load(config_path, scheduler=scheduler, mode=mode, seed=seed, inline=True if inline else None)
    models = load_models(model_dir) if model_dir else None
    context = build_context(config, models)
    result = run_simulation(config, context, keep_schedules=dump_schedules)
    out = _output_dir(output, config)
    write_run(result, out, dump_schedules)

    summary = result.summary
    rprint(f"[sky_blue2]{summary['scheduler']}[/sky_blue2] ({summary['mode']}), {summary['cycles']} cycles")
    rprint(f"  mean revenue:      [green]{summary['mean_revenue']:.4f}[/green]")
    rprint(f"  mean utilization:  {summary['mean_utilization']:.4f}")
    rprint(f"  withdrawal / SLA:  {summary['withdrawal_frequency']:.4f} / {summary['sla_frequency']:.4f}")
    rprint(f"  dropped requests:  {summary['dropped']}")
    rprint(f" -- Wrote: [sky_blue2]{out}[/sky_blue2]")


@cli.command(context_settings=CONTEXT_SETTINGS)
@click.option("-t", "--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--max-lag", default=60, show_default=True, type=click.IntRange(min=0))
@output_option
@verbose_option
@handle_errors
def analyze(trace_path, max_lag, output):
    """Temporal and spatial correlation of a request trace"""
    trace = load_trace(trace_path)
    totals = per_cycle_totals(trace)
    if len(totals) < 2:
        raise click.ClickException("trace must span at least 2 cycles")
    values = acf(totals, min(max_lag, len(totals) - 1))
    pairs = spatial_correlation(location_series(trace)) if trace.locations > 1 else []

    out = Path(output or Config.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    write_acf(values, out / "acf.csv")
    write_spatial_correlation(pairs, out / "spatial_corr.csv")

    rprint(f"{len(trace)} requests over {trace.horizon} cycles and {trace.locations} locations")
    for lag in (1, 5, 30, 60):
        if lag < len(values):
            rprint(f"  ρ({lag}) = {values[lag]:.4f}")
    if pairs:
        rhos = [rho for _, _, rho in pairs]
        rprint(f"  spatial ρ: min {min(rhos):.4f}, max {max(rhos):.4f}")
    rprint(f" -- Wrote: [sky_blue2]{out}[/sky_blue2]")


@cli.command(context_settings=CONTEXT_SETTINGS)
@config_option
@click.option("--alpha", "alphas", required=True, callback=_grid, help="Grid, e.g. 0:0.1:0.3 or 0,0.05.")
@click.option("--beta", "betas", required=True, callback=_grid, help="Grid, e.g. 0.6:0.05:0.9.")
@output_option
@verbose_option
@handle_errors
def sweep(config_path, alphas, betas, output):
    """Mean Seer revenue over an (alpha, beta) grid, both modes"""
    config = _load(config_path)
    points = sweep_thresholds(config, alphas, betas)
    out = _output_dir(output, config)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(points, out / "sweep.csv")

    rows = [
        {"alpha": p.alpha, "beta": p.beta, "mode": p.mode.value, "mean_revenue": p.mean_revenue} for p in points
    ]
    rprint(_summary_table("Threshold sweep", rows))
    rprint(f" -- Wrote: [sky_blue2]{out / 'sweep.csv'}[/sky_blue2]")


@cli.command(context_settings=CONTEXT_SETTINGS)
@config_option
@click.option("--latent", type=click.IntRange(min=1), help="Predictor latent size.")
@click.option("--window", type=click.IntRange(min=1), help="Predictor input window in cycles.")
@click.option("--epochs", type=click.IntRange(min=0), help="Predictor training epochs.")
@click.option("--seed", type=int, help="Override the root seed.")
@output_option
@verbose_option
@handle_errors
def train(config_path, latent, window, epochs, seed, output):
    """Fit the clusters, revenue model and predictor; save them for reuse

    For example:

        ./run.py train -c example_config.json --epochs 20 -o out/models
    """
    config = _load(
        config_path, seed=seed, predictor={"latent": latent, "window": window, "epochs": epochs}
    )
    context = build_context(config)
    out = _output_dir(output, config)
    for path in save_models(context.models, context.revenue, out):
        rprint(f" -- Wrote: [sky_blue2]{path}[/sky_blue2]")


@cli.command(context_settings=CONTEXT_SETTINGS)
@config_option
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Trace CSV to write.")
@click.option("--seed", type=int, help="Override the root seed.")
@verbose_option
@handle_errors
def generate(config_path, output, seed):
    """Write the synthetic request trace of the configured workload"""
    config = _load(config_path, seed=seed)
    trace = synthesize_trace(config.workload, config.seed)
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, output)
    rprint(f"{len(trace)} requests over {trace.horizon} cycles")
    rprint(f" -- Wrote: [sky_blue2]{output}[/sky_blue2]")


@cli.command(context_settings=CONTEXT_SETTINGS)
@config_option
@click.option(
    "-s",
    "--scheduler",
    "names",
    multiple=True,
    help="Scheduler to include (repeatable): seer, seer-conservative, seer-aggressive, origin, gp, greedy, maxflow.",
)
@output_option
@verbose_option
@handle_errors
def compare(config_path, names, output):
    """Run several schedulers on one trained context and tabulate them"""
    config = _load(config_path)
    rows = compare_schedulers(config, names or DEFAULT_COMPARISON)
    out = _output_dir(output, config)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison(rows, out / "comparison.csv")
    rprint(_summary_table("Scheduler comparison", rows))
    rprint(f" -- Wrote: [sky_blue2]{out / 'comparison.csv'}[/sky_blue2]")
