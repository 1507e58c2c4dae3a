"""
Rounds of distributed (serverless) federated learning over a multi-hop network,
plus the client-server and data-fusion reference schemes.

Every random draw comes from a stream keyed by (master seed, stream id, sensor id),
so results do not depend on how sensors are scheduled across worker threads.
"""

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from fedsense.errors import NotConvergedError
from fedsense.metrics import check_convergence, record_overhead, update_trace
from fedsense.nn import (
    ModelParams,
    OptimizerState,
    evaluate,
    init_model,
    init_optimizer,
    packet_size_bytes,
    train_local,
)
from fedsense.signal import FeatureDataset, generate_sensor_dataset, split_dataset
from fedsense.sim_models import (
    AccuracyTrace,
    LinkModel,
    OverheadReport,
    RoundOutcome,
    Scheme,
    SimConfig,
    TrainConfig,
)
from fedsense.topology import Topology, build_topology

STREAM_TOPOLOGY = 0
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_LINK = 4
STREAM_SPLIT = 5

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


def random_stream(seed: int, stream: int, sensor: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, stream, sensor) key."""
    return np.random.default_rng([seed, stream, sensor])


@dataclass
class SensorState:
    """One sensor's model, optimizer, local data and private random streams."""

    id: int
    model: ModelParams
    optimizer: OptimizerState
    train_data: FeatureDataset
    test_data: FeatureDataset
    train_rng: np.random.Generator
    link_rng: np.random.Generator

    def __post_init__(self):
        if len(self.train_data) == 0:
            raise ValueError(f"sensor {self.id} has no training data")


@dataclass
class SimulationResult:
    """Everything a run produced. outcomes[0] is the untrained round 0."""

    config: SimConfig
    topology: Topology
    outcomes: List[RoundOutcome]
    trace: AccuracyTrace
    overhead: OverheadReport
    models: List[ModelParams] = field(repr=False)
    converged_at: Optional[int] = None

    @property
    def detected_at(self) -> Optional[int]:
        if self.converged_at is None:
            return None
        return self.converged_at + self.config.convergence.window

    @property
    def initial_accuracy(self) -> float:
        return self.outcomes[0].average_accuracy

    @property
    def best_accuracy(self) -> Optional[float]:
        return self.trace.best


def _map(executor: Optional[Executor], fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


# === AGGREGATION ===

def federated_average(own: ModelParams, received: Sequence[ModelParams]) -> ModelParams:
    """
    Element-wise mean of own and the received models, all weighted equally.

    The received deviations from own are sorted before summing, so the result is
    bit-identical for every ordering of received, and identical inputs give back own.

    Args:
        own: The aggregating sensor's model
        received: Models that actually arrived this round

    Returns:
        New averaged model (a copy of own when nothing arrived)
    """
    for other in received:
        if not own.same_shape(other):
            raise ValueError("cannot average models of different shapes")
    if not received:
        return own.copy()

    count = len(received) + 1
    averaged = []
    for k, base in enumerate(own.arrays()):
        deviations = np.stack([other.arrays()[k] - base for other in received])
        averaged.append(base + np.sort(deviations, axis=0).sum(axis=0) / count)
    return ModelParams(averaged[0::2], averaged[1::2])


# === ROUNDS ===

def _check_sensors(sensors: Sequence[SensorState], topology: Topology) -> Dict[int, SensorState]:
    by_id = {s.id: s for s in sensors}
    if len(sensors) != topology.n_sensors or sorted(by_id) != list(range(topology.n_sensors)):
        raise ValueError(
            f"{len(sensors)} sensor states do not match a topology of {topology.n_sensors} sensors"
        )
    return by_id


def _train_all(
    sensors: Sequence[SensorState],
    cfg: TrainConfig,
    executor: Optional[Executor],
) -> List[Tuple[ModelParams, OptimizerState]]:
    return _map(executor, lambda s: train_local(s.model, s.optimizer, s.train_data, cfg, s.train_rng), sensors)


def _evaluate_all(
    models: Sequence[ModelParams],
    global_test: FeatureDataset,
    executor: Optional[Executor],
) -> List[float]:
    return _map(executor, lambda m: evaluate(m, global_test), models)


def _outcome(round_index: int, accuracies: List[float], received: List[int], broadcasters: List[int]) -> RoundOutcome:
    return RoundOutcome(
        round_index=round_index,
        received_counts=received,
        broadcasters=broadcasters,
        accuracies=accuracies,
        average_accuracy=float(np.mean(accuracies)),
    )


def exchange_models(
    sensors: Sequence[SensorState],
    topology: Topology,
    link: LinkModel,
) -> Tuple[List[int], Dict[int, List[int]]]:
    """
    Decide who broadcasts and which packets arrive.

    A sensor broadcasts with probability broadcast_prob; each directed copy to a
    neighbor is then lost independently with probability packet_loss_prob. All draws
    come from the sender's own link stream.

    Returns:
        (sorted broadcaster ids, receiver id -> sorted sender ids)
    """
    broadcasters = []
    received: Dict[int, List[int]] = {s.id: [] for s in sensors}
    for sender in sorted(sensors, key=lambda s: s.id):
        if sender.link_rng.random() >= link.broadcast_prob:
            continue
        broadcasters.append(sender.id)
        for nbr in sorted(topology.neighbors(sender.id)):
            if sender.link_rng.random() >= link.packet_loss_prob:
                received[nbr].append(sender.id)
    return broadcasters, received


def run_round(
    sensors: Sequence[SensorState],
    topology: Topology,
    link: LinkModel,
    cfg: TrainConfig,
    global_test: FeatureDataset,
    round_index: int = 1,
    executor: Optional[Executor] = None,
) -> RoundOutcome:
    """
    One synchronous round: local training, lossy broadcast, federated averaging.

    All sensors finish training before any aggregation starts, and aggregation uses
    this round's trained models. Sensor states are updated in place.

    Args:
        sensors: Every sensor's state (any order)
        topology: Connected topology with one node per sensor
        link: Loss and broadcast probabilities
        cfg: Local training hyperparameters
        global_test: Pooled test set for evaluation
        round_index: Index recorded in the outcome
        executor: Optional pool for training and evaluation

    Returns:
        RoundOutcome with post-aggregation accuracies
    """
    by_id = _check_sensors(sensors, topology)
    ordered = [by_id[i] for i in range(topology.n_sensors)]

    trained = _train_all(ordered, cfg, executor)
    # barrier: every trained model exists before anyone aggregates
    broadcasters, received = exchange_models(ordered, topology, link)

    for sensor, (model, opt) in zip(ordered, trained):
        arrivals = [trained[sender][0] for sender in received[sensor.id]]
        sensor.model = federated_average(model, arrivals)
        sensor.optimizer = opt

    accuracies = _evaluate_all([s.model for s in ordered], global_test, executor)
    return _outcome(round_index, accuracies, [len(received[s.id]) for s in ordered], broadcasters)


def run_centralized_round(
    sensors: Sequence[SensorState],
    cfg: TrainConfig,
    global_test: FeatureDataset,
    round_index: int = 1,
    executor: Optional[Executor] = None,
) -> RoundOutcome:
    """
    One client-server round: every client trains and uploads, the server averages all
    models and every client adopts the global model.
    """
    ordered = sorted(sensors, key=lambda s: s.id)
    trained = _train_all(ordered, cfg, executor)
    global_model = federated_average(trained[0][0], [model for model, _ in trained[1:]])
    for sensor, (_, opt) in zip(ordered, trained):
        sensor.model = global_model.copy()
        sensor.optimizer = opt

    accuracy = evaluate(global_model, global_test)
    return _outcome(
        round_index, [accuracy] * len(ordered), [1] * len(ordered), [s.id for s in ordered]
    )


# === SIMULATION ===

def generate_network_data(config: SimConfig, topology: Topology) -> List[FeatureDataset]:
    """Each sensor's full local dataset (before the train/test split), ordered by id."""
    return [
        generate_sensor_dataset(
            position,
            config.channel,
            config.dataset.samples_per_sensor,
            config.dataset.target_fraction,
            random_stream(config.seed, STREAM_DATA, sensor_id),
        )
        for sensor_id, position in enumerate(topology.positions)
    ]


def prepare_sensors(config: SimConfig, topology: Topology) -> Tuple[List[SensorState], FeatureDataset]:
    """
    Generate each sensor's data and an independent random model.

    Returns:
        (sensor states ordered by id, pooled global test set)
    """
    sensors = []
    for sensor_id, data in enumerate(generate_network_data(config, topology)):
        train, test = split_dataset(
            data, config.dataset.train_fraction, random_stream(config.seed, STREAM_SPLIT, sensor_id)
        )
        model = init_model(random_stream(config.seed, STREAM_INIT, sensor_id))
        sensors.append(
            SensorState(
                id=sensor_id,
                model=model,
                optimizer=init_optimizer(model),
                train_data=train,
                test_data=test,
                train_rng=random_stream(config.seed, STREAM_TRAIN, sensor_id),
                link_rng=random_stream(config.seed, STREAM_LINK, sensor_id),
            )
        )

    global_test = FeatureDataset.concat([s.test_data for s in sensors])
    logger.info(
        f"Generated data for {len(sensors)} sensors: "
        f"{sum(len(s.train_data) for s in sensors)} train / {len(global_test)} pooled test samples"
    )
    return sensors, global_test


def _iterate(
    config: SimConfig,
    topology: Topology,
    models: Callable[[], List[ModelParams]],
    round_0: RoundOutcome,
    step: Callable[[int], RoundOutcome],
    packet_bytes: int,
    log_every: int,
) -> SimulationResult:
    outcomes = [round_0]
    trace = AccuracyTrace()
    overhead = OverheadReport.empty(topology.n_sensors)
    converged_at = None
    window = config.convergence.window

    logger.info(
        f"Starting {config.scheme.value} run (seed {config.seed}) on {topology.kind.value}: "
        f"round 0 average accuracy {round_0.average_accuracy:.4f}"
    )
    for t in range(1, config.max_rounds + 1):
        outcome = step(t)
        outcomes.append(outcome)
        trace = update_trace(trace, outcome.average_accuracy)
        overhead = record_overhead(overhead, outcome.broadcasters, packet_bytes, config.energy_per_broadcast)

        if log_every and t % log_every == 0:
            logger.info(f"Round {t}: average {outcome.average_accuracy:.4f}, best {trace.best:.4f}")

        if len(trace) > window:
            converged_at = check_convergence(trace, config.convergence)
            if converged_at is not None:
                logger.info(f"Converged at round {converged_at} (detected at round {t}), best {trace.best:.4f}")
                break

    result = SimulationResult(
        config=config,
        topology=topology,
        outcomes=outcomes,
        trace=trace,
        overhead=overhead,
        models=models(),
        converged_at=converged_at,
    )
    if converged_at is None:
        raise NotConvergedError(
            f"No convergence within {config.max_rounds} rounds (best average accuracy {trace.best:.4f})",
            result,
        )
    return result


def _pool(workers: int):
    return ThreadPoolExecutor(max_workers=workers) if workers > 1 else nullcontext(None)


def run_simulation(config: SimConfig, workers: int = 1, log_every: int = 50) -> SimulationResult:
    """
    Run distributed federated learning until convergence or max_rounds.

    Args:
        config: Experiment description; the run is a pure function of it
        workers: Threads used for per-sensor training and evaluation
        log_every: Log a progress line every this many rounds (0 disables)

    Returns:
        SimulationResult

    Raises:
        TopologyError: if the topology is disconnected
        NotConvergedError: if max_rounds pass without convergence (partial result attached)
    """
    topology = build_topology(config.topology, random_stream(config.seed, STREAM_TOPOLOGY))
    sensors, global_test = prepare_sensors(config, topology)

    with _pool(workers) as executor:
        round_0 = _outcome(
            0,
            _evaluate_all([s.model for s in sensors], global_test, executor),
            [0] * len(sensors),
            [],
        )
        return _iterate(
            config,
            topology,
            lambda: [s.model for s in sensors],
            round_0,
            lambda t: run_round(sensors, topology, config.link, config.training, global_test, t, executor),
            packet_size_bytes(sensors[0].model),
            log_every,
        )


def run_centralized_baseline(config: SimConfig, workers: int = 1, log_every: int = 50) -> SimulationResult:
    """
    Client-server federated learning on the same data pipeline: each round all
    trained models are averaged into one global model that every sensor adopts.

    Raises:
        TopologyError, NotConvergedError: as run_simulation
    """
    topology = build_topology(config.topology, random_stream(config.seed, STREAM_TOPOLOGY))
    sensors, global_test = prepare_sensors(config, topology)

    with _pool(workers) as executor:
        round_0 = _outcome(
            0,
            _evaluate_all([s.model for s in sensors], global_test, executor),
            [0] * len(sensors),
            [],
        )
        return _iterate(
            config,
            topology,
            lambda: [s.model for s in sensors],
            round_0,
            lambda t: run_centralized_round(sensors, config.training, global_test, t, executor),
            packet_size_bytes(sensors[0].model),
            log_every,
        )


def run_fusion_baseline(config: SimConfig, log_every: int = 50) -> SimulationResult:
    """
    Data-fusion reference: a single model trained on the pooled training data of all
    sensors, one local epoch setting per round. Every sensor evaluates that model;
    no models are broadcast.

    Raises:
        TopologyError, NotConvergedError: as run_simulation
    """
    topology = build_topology(config.topology, random_stream(config.seed, STREAM_TOPOLOGY))
    sensors, global_test = prepare_sensors(config, topology)
    pooled = FeatureDataset.concat([s.train_data for s in sensors])
    n = len(sensors)

    state = {"model": sensors[0].model, "optimizer": sensors[0].optimizer}
    rng = random_stream(config.seed, STREAM_TRAIN, 0)

    def step(t: int) -> RoundOutcome:
        state["model"], state["optimizer"] = train_local(
            state["model"], state["optimizer"], pooled, config.training, rng
        )
        return _outcome(t, [evaluate(state["model"], global_test)] * n, [0] * n, [])

    round_0 = _outcome(0, [evaluate(state["model"], global_test)] * n, [0] * n, [])
    return _iterate(
        config,
        topology,
        lambda: [state["model"]] * n,
        round_0,
        step,
        packet_size_bytes(state["model"]),
        log_every,
    )


def simulate(config: SimConfig, workers: int = 1, log_every: int = 50) -> SimulationResult:
    """Run the scheme config.scheme names."""
    if config.scheme is Scheme.CENTRALIZED:
        return run_centralized_baseline(config, workers, log_every)
    if config.scheme is Scheme.FUSION:
        return run_fusion_baseline(config, log_every)
    return run_simulation(config, workers, log_every)
