"""
Federated Sensing Simulator MCP Server Implementation

This module provides a Model Context Protocol server for running the simulator.
It exposes topologies as resources and provides tools for running simulations,
experiment suites and inspecting the classifier.
"""

import json
import logging
from typing import List, Optional

from mcp.server.fastmcp import FastMCP

from fedsense.config import apply_overrides, settings
from fedsense.errors import FedSenseError, NotConvergedError
from fedsense.experiments import DEFAULT_SEEDS, SuiteName, build_suite, run_suite, to_markdown
from fedsense.nn import LAYER_SIZES, count_parameters, init_model, packet_size_bytes
from fedsense.protocol import STREAM_INIT, STREAM_TOPOLOGY, SimulationResult, random_stream, simulate
from fedsense.sim_models import SimConfig, TopologyKind, TopologySpec
from fedsense.topology import Topology, build_topology, topology_to_json

logger = logging.getLogger(__name__)

mcp = FastMCP(
    "Federated Sensing Simulator",
    instructions="Simulate distributed federated learning over multi-hop wireless sensor networks that classify QPSK against BPSK signals. You can run single simulations on line, ring, star, grid or random topologies with packet loss and broadcast probabilities, run the canned experiment suites, and inspect topologies and the classifier.",
)


# === HELPER FUNCTIONS ===

def format_topology(topology: Topology):
    """Format a topology for display."""
    sensors = "\n".join(
        f"  {i}: ({x:.1f}, {y:.1f}) degree {topology.degree(i)} -> {topology.neighbors(i)}"
        for i, (x, y) in enumerate(topology.positions)
    )
    return f"""
Kind: {topology.kind.value}
Sensors: {topology.n_sensors}
Communication range: {topology.comm_range}
Links: {len(topology.edges())}
{sensors}
"""


def format_result(result: SimulationResult):
    """Format a simulation result for display."""
    converged = (
        f"round {result.converged_at} (detected at round {result.detected_at})"
        if result.converged_at is not None
        else f"not within {result.config.max_rounds} rounds"
    )
    return f"""
Scheme: {result.config.scheme.value}
Topology: {result.topology.kind.value} ({result.topology.n_sensors} sensors)
Seed: {result.config.seed}
Converged: {converged}
Initial average accuracy: {result.initial_accuracy:.4f}
Best average accuracy: {result.best_accuracy:.4f}
Rounds run: {len(result.trace)}
Broadcasts: {result.overhead.total_broadcasts}
Bytes transmitted: {result.overhead.bytes_transmitted}
"""


# === RESOURCES ===

@mcp.resource("topology://{kind}")
def get_topology(kind: str) -> str:
    """Get a topology as JSON (random topologies use seed 0)."""
    topology = build_topology(TopologySpec(kind=TopologyKind(kind)), random_stream(0, STREAM_TOPOLOGY))
    return json.dumps(topology_to_json(topology), indent=2)


# === TOOLS ===

@mcp.tool()
def describe_topology(kind: str = "grid", seed: int = 0) -> str:
    """Describe a topology: sensor positions, degrees and neighbors."""
    try:
        topology = build_topology(TopologySpec(kind=TopologyKind(kind)), random_stream(seed, STREAM_TOPOLOGY))
        return format_topology(topology)
    except (ValueError, FedSenseError) as e:
        logger.error(f"Could not build topology '{kind}': {e}", exc_info=True)
        return f"Could not build topology '{kind}': {e}"


@mcp.tool()
def model_summary() -> str:
    """Describe the sensor classifier: layer sizes, parameter count and packet size."""
    model = init_model(random_stream(0, STREAM_INIT), LAYER_SIZES)
    return f"""
Layer sizes: {' -> '.join(str(s) for s in LAYER_SIZES)}
Parameters: {count_parameters(model)}
Packet size: {packet_size_bytes(model)} bytes
"""


@mcp.tool(name="simulate")
def simulate_network(
    topology: str = "grid",
    seed: int = 0,
    loss_prob: float = 0.0,
    broadcast_prob: float = 1.0,
    max_rounds: int = 2000,
    scheme: str = "distributed",
    samples_per_sensor: Optional[int] = None,
) -> str:
    """Run one federated learning simulation and summarize convergence and accuracy."""
    try:
        config = apply_overrides(
            SimConfig(),
            {
                "topology.kind": topology,
                "seed": seed,
                "link.packet_loss_prob": loss_prob,
                "link.broadcast_prob": broadcast_prob,
                "max_rounds": max_rounds,
                "scheme": scheme,
                "dataset.samples_per_sensor": samples_per_sensor,
            },
        )
        try:
            result = simulate(config, settings.workers, settings.log_every)
        except NotConvergedError as e:
            result = e.result
        return format_result(result)
    except (ValueError, FedSenseError) as e:
        logger.error(f"Simulation failed: {e}", exc_info=True)
        return f"Simulation failed: {e}"


@mcp.tool()
def run_experiment_suite(name: str, seeds: Optional[List[int]] = None, max_rounds: int = 2000) -> str:
    """Run an experiment suite (topology, loss, broadcast or baseline) and return its table."""
    try:
        base = apply_overrides(SimConfig(), {"max_rounds": max_rounds})
        suite = build_suite(SuiteName(name), seeds or list(DEFAULT_SEEDS), base)
        return to_markdown(run_suite(suite, settings.workers))
    except (ValueError, FedSenseError) as e:
        logger.error(f"Suite '{name}' failed: {e}", exc_info=True)
        return f"Suite '{name}' failed: {e}"


if __name__ == "__main__":
    mcp.run()
