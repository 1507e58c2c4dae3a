#!/usr/bin/env python
"""
Simple script to check that the simulator is installed and working.
Run with: uv run python scripts/test_simulation_setup.py
"""

from fedsense import nn, protocol, topology
from fedsense.errors import NotConvergedError
from fedsense.sim_models import ConvergenceConfig, DatasetConfig, SimConfig, TopologyKind, TopologySpec


def test_simulation_setup():
    """Builds every topology, checks the classifier size and runs a short simulation."""
    print("Starting simulator setup check...")

    # Test 1: Topologies
    print("\n=== Testing Topologies ===")
    for kind in TopologyKind:
        built = topology.build_topology(TopologySpec(kind=kind), protocol.random_stream(0, protocol.STREAM_TOPOLOGY))
        print(f"  - {kind.value}: {built.n_sensors} sensors, {len(built.edges())} links, degrees {built.degrees()}")

    # Test 2: Classifier
    print("\n=== Testing Classifier ===")
    model = nn.init_model(protocol.random_stream(0, protocol.STREAM_INIT))
    n_params = nn.count_parameters(model)
    print(f"Parameters: {n_params} (packet {nn.packet_size_bytes(model)} bytes)")
    if n_params != 14_626:
        print("❌ Unexpected parameter count")
        return

    # Test 3: A short run on the line topology
    print("\n=== Testing Simulation ===")
    config = SimConfig(
        topology=TopologySpec(kind=TopologyKind.LINE),
        dataset=DatasetConfig(samples_per_sensor=200),
        convergence=ConvergenceConfig(epsilon=0.01, window=10),
        max_rounds=30,
    )
    try:
        result = protocol.run_simulation(config, log_every=0)
    except NotConvergedError as e:
        print(f"Run did not converge within {config.max_rounds} rounds (fine for a smoke check)")
        result = e.result

    print(f"Round 0 average accuracy: {result.initial_accuracy:.4f}")
    print(f"Best average accuracy: {result.best_accuracy:.4f} after {len(result.trace)} rounds")
    print(f"Broadcasts: {result.overhead.total_broadcasts}")

    print("\n✅ Simulator setup check completed!")


if __name__ == "__main__":
    test_simulation_setup()
