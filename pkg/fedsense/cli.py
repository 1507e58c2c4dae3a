"""
Command-line entry point: run single simulations, experiment suites, and dataset export.

Exit codes: 0 success, 2 configuration error, 3 no convergence by max_rounds, 4 I/O error.
"""

import json
import logging
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer

from fedsense.config import apply_overrides, load_sim_config, save_sim_config, settings
from fedsense.errors import ConfigError, NotConvergedError, TopologyError
from fedsense.experiments import DEFAULT_SEEDS, SuiteName, build_suite, run_suite, to_markdown, write_suite
from fedsense.metrics import summary_dict, write_metrics_csv, write_summary_json
from fedsense.nn import model_to_bytes
from fedsense.protocol import STREAM_TOPOLOGY, SimulationResult, generate_network_data, random_stream, simulate
from fedsense.signal import save_dataset_csv
from fedsense.sim_models import Scheme, SimConfig, TopologyKind
from fedsense.topology import build_topology, save_topology

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
TOPOLOGY_FILE = "topology.json"
MODELS_DIR = "models"

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="fedsense",
    help="Distributed federated learning over multi-hop wireless sensor networks.",
    no_args_is_help=True,
    add_completion=False,
)


class ExitCode(IntEnum):
    OK = 0
    CONFIG_ERROR = 2
    NOT_CONVERGED = 3
    IO_ERROR = 4


def _resolve_config(config_path: Optional[Path], overrides: Dict[str, Any]) -> SimConfig:
    path = config_path or (Path(settings.config_path) if settings.config_path else None)
    return apply_overrides(load_sim_config(str(path) if path else None), overrides)


def _output_dir(config: SimConfig, out: Optional[Path]) -> Path:
    return Path(out or config.output_dir or settings.output_dir)


def write_run_artifacts(result: SimulationResult, out_dir: Path) -> Dict[str, Any]:
    """
    Write effective config, metrics CSV, summary JSON, topology JSON and final models.

    Returns:
        The summary dictionary
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    save_sim_config(result.config, out_dir)
    write_metrics_csv(result.outcomes, result.trace, out_dir / METRICS_FILE)
    summary = summary_dict(
        result.trace, result.overhead, result.config.convergence, result.initial_accuracy
    )
    write_summary_json(summary, out_dir / SUMMARY_FILE)
    save_topology(result.topology, out_dir / TOPOLOGY_FILE)

    models_dir = out_dir / MODELS_DIR
    models_dir.mkdir(exist_ok=True)
    for sensor_id, model in enumerate(result.models):
        (models_dir / f"sensor_{sensor_id:02d}.bin").write_bytes(model_to_bytes(model))
    return summary


def cmd_run(
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    out: Optional[Path] = None,
    workers: Optional[int] = None,
) -> ExitCode:
    """Run one simulation and write its artifacts; returns the exit code."""
    try:
        config = _resolve_config(config_path, overrides or {})
        out_dir = _output_dir(config, out)
        config = apply_overrides(config, {"output_dir": str(out_dir)})
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        typer.echo(f"Configuration error: {e}", err=True)
        return ExitCode.CONFIG_ERROR

    code = ExitCode.OK
    try:
        result = simulate(config, workers or settings.workers, settings.log_every)
    except TopologyError as e:
        logger.error(f"Topology error: {e}", exc_info=True)
        typer.echo(f"Topology error: {e}", err=True)
        return ExitCode.CONFIG_ERROR
    except NotConvergedError as e:
        logger.warning(str(e))
        result = e.result
        code = ExitCode.NOT_CONVERGED

    try:
        summary = write_run_artifacts(result, out_dir)
    except OSError as e:
        logger.error(f"Could not write results to {out_dir}: {e}", exc_info=True)
        typer.echo(f"I/O error: {e}", err=True)
        return ExitCode.IO_ERROR

    typer.echo(f"converged_at: {summary['converged_at']}")
    typer.echo(f"best_accuracy: {summary['best_accuracy']:.4f}")
    if code is ExitCode.NOT_CONVERGED:
        typer.echo(f"No convergence within {config.max_rounds} rounds", err=True)
    return code


def cmd_suite(
    name: SuiteName,
    seeds: Optional[List[int]] = None,
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    out: Optional[Path] = None,
    workers: Optional[int] = None,
) -> ExitCode:
    """Run an experiment suite and write its tables; returns the exit code."""
    try:
        base = _resolve_config(config_path, overrides or {})
        suite = build_suite(name, seeds or list(DEFAULT_SEEDS), base)
    except (ConfigError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        typer.echo(f"Configuration error: {e}", err=True)
        return ExitCode.CONFIG_ERROR

    try:
        result = run_suite(suite, workers or settings.workers)
    except TopologyError as e:
        logger.error(f"Topology error: {e}", exc_info=True)
        typer.echo(f"Topology error: {e}", err=True)
        return ExitCode.CONFIG_ERROR

    out_dir = _output_dir(base, out)
    try:
        write_suite(result, out_dir)
        save_sim_config(base, out_dir)
    except OSError as e:
        logger.error(f"Could not write suite tables to {out_dir}: {e}", exc_info=True)
        typer.echo(f"I/O error: {e}", err=True)
        return ExitCode.IO_ERROR

    typer.echo(to_markdown(result))
    return ExitCode.OK


def cmd_gen_data(
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    out: Optional[Path] = None,
) -> ExitCode:
    """Write one CSV of 32 features + label per sensor; returns the exit code."""
    try:
        config = _resolve_config(config_path, overrides or {})
        topology = build_topology(config.topology, random_stream(config.seed, STREAM_TOPOLOGY))
    except (ConfigError, TopologyError) as e:
        logger.error(f"Configuration error: {e}")
        typer.echo(f"Configuration error: {e}", err=True)
        return ExitCode.CONFIG_ERROR

    out_dir = _output_dir(config, out)
    try:
        for sensor_id, data in enumerate(generate_network_data(config, topology)):
            save_dataset_csv(data, out_dir / f"sensor_{sensor_id:02d}.csv")
        save_topology(topology, out_dir / TOPOLOGY_FILE)
        save_sim_config(config, out_dir)
    except OSError as e:
        logger.error(f"Could not write datasets to {out_dir}: {e}", exc_info=True)
        typer.echo(f"I/O error: {e}", err=True)
        return ExitCode.IO_ERROR

    typer.echo(f"Wrote {topology.n_sensors} sensor datasets to {out_dir}")
    return ExitCode.OK


# === TYPER COMMANDS ===

@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level (default from FEDSENSE_LOG_LEVEL)."),
):
    logging.basicConfig(
        level=(log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@app.command()
def run(
    config: Optional[Path] = typer.Option(None, "--config", help="Experiment JSON file."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    topology: Optional[TopologyKind] = typer.Option(None, "--topology", help="Topology kind."),
    loss_prob: Optional[float] = typer.Option(None, "--loss-prob", help="Per-link packet loss probability."),
    broadcast_prob: Optional[float] = typer.Option(None, "--broadcast-prob", help="Per-round broadcast probability."),
    max_rounds: Optional[int] = typer.Option(None, "--max-rounds", help="Round limit."),
    scheme: Optional[Scheme] = typer.Option(None, "--scheme", help="Learning scheme."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory (default FEDSENSE_OUTPUT_DIR)."),
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker threads."),
):
    """Run one simulation and write metrics, summary, topology and models."""
    overrides = {
        "seed": seed,
        "topology.kind": topology,
        "link.packet_loss_prob": loss_prob,
        "link.broadcast_prob": broadcast_prob,
        "max_rounds": max_rounds,
        "scheme": scheme,
    }
    raise typer.Exit(code=int(cmd_run(config, overrides, out, workers)))


@app.command()
def suite(
    name: SuiteName = typer.Argument(..., help="Suite to run."),
    seed: Optional[List[int]] = typer.Option(None, "--seed", help="Seed to include (repeatable; default 0-4)."),
    config: Optional[Path] = typer.Option(None, "--config", help="Base experiment JSON file."),
    max_rounds: Optional[int] = typer.Option(None, "--max-rounds", help="Round limit per run."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory (default FEDSENSE_OUTPUT_DIR)."),
    workers: Optional[int] = typer.Option(None, "--workers", help="Suite cells run in parallel."),
):
    """Run an experiment suite over seeds and write comparison tables."""
    raise typer.Exit(code=int(cmd_suite(name, seed, config, {"max_rounds": max_rounds}, out, workers)))


@app.command("gen-data")
def gen_data(
    config: Optional[Path] = typer.Option(None, "--config", help="Experiment JSON file."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    topology: Optional[TopologyKind] = typer.Option(None, "--topology", help="Topology kind."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
):
    """Write per-sensor feature datasets as CSV."""
    raise typer.Exit(code=int(cmd_gen_data(config, {"seed": seed, "topology.kind": topology}, out)))


@app.command()
def schema():
    """Print the JSON schema of experiment files."""
    typer.echo(json.dumps(SimConfig.model_json_schema(), indent=2))


@app.command()
def serve():
    """Serve the simulator to MCP clients over stdio."""
    from fedsense.server import mcp

    mcp.run()
