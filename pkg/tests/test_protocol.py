"""Tests for federated averaging, protocol rounds and whole simulations."""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from fedsense.errors import NotConvergedError
from fedsense.nn import ModelParams, init_model, init_optimizer, train_local
from fedsense.protocol import (
    STREAM_TOPOLOGY,
    SensorState,
    exchange_models,
    federated_average,
    prepare_sensors,
    random_stream,
    run_centralized_round,
    run_round,
    run_simulation,
    simulate,
)
from fedsense.signal import FeatureDataset
from fedsense.sim_models import (
    ConvergenceConfig,
    DatasetConfig,
    LinkModel,
    Scheme,
    SimConfig,
    TopologyKind,
    TopologySpec,
    TrainConfig,
)
from fedsense.topology import build_topology


def _model(seed: int) -> ModelParams:
    return init_model(np.random.default_rng(seed))


def _constant(value: float) -> ModelParams:
    base = _model(0)
    return ModelParams([np.full_like(w, value) for w in base.weights], [np.full_like(b, value) for b in base.biases])


def _network(config: SimConfig):
    topology = build_topology(config.topology, random_stream(config.seed, STREAM_TOPOLOGY))
    sensors, global_test = prepare_sensors(config, topology)
    return topology, sensors, global_test


class TestFederatedAverage:
    def test_nothing_received(self) -> None:
        model = _model(1)
        assert federated_average(model, []) == model

    def test_idempotent(self) -> None:
        model = _model(1)
        assert federated_average(model, [model.copy(), model.copy()]) == model

    def test_element_wise_mean(self) -> None:
        averaged = federated_average(_constant(0.0), [_constant(1.0)])
        assert averaged == _constant(0.5)

    def test_permutation_invariant(self) -> None:
        own = _model(0)
        received = [_model(s) for s in range(1, 6)]
        reference = federated_average(own, received)
        for order in ([4, 3, 2, 1, 0], [2, 0, 4, 1, 3]):
            assert federated_average(own, [received[i] for i in order]) == reference

    def test_scaling_commutes(self) -> None:
        own, other = _constant(2.0), _constant(4.0)
        half = federated_average(_constant(1.0), [_constant(2.0)])
        full = federated_average(own, [other])
        for a, b in zip(full.arrays(), half.arrays()):
            np.testing.assert_allclose(a, 2 * b)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ValueError):
            federated_average(_model(0), [init_model(np.random.default_rng(0), (32, 2))])


class TestExchange:
    def test_star_receive_counts(self, star_config: SimConfig) -> None:
        topology, sensors, _ = _network(star_config)
        _, received = exchange_models(sensors, topology, LinkModel())
        assert [len(received[i]) for i in range(6)] == [5, 1, 1, 1, 1, 1]

    def test_received_count_mean(self, tiny_config: SimConfig) -> None:
        p, q, rounds = 0.5, 0.3, 400
        config = tiny_config.model_copy(update={"topology": TopologySpec(kind=TopologyKind.GRID)})
        topology, sensors, _ = _network(config)
        link = LinkModel(broadcast_prob=p, packet_loss_prob=q)
        counts = np.zeros((rounds, topology.n_sensors))
        for r in range(rounds):
            _, received = exchange_models(sensors, topology, link)
            counts[r] = [len(received[i]) for i in range(topology.n_sensors)]
        degrees = np.array(topology.degrees())
        assert (counts <= degrees).all()

        # each sender reaches Binomial(degree, 1 - q) neighbors when it broadcasts
        expected = p * (1 - q) * degrees.sum()
        variance = (p * degrees * (1 - q) * q + p * (1 - p) * (degrees * (1 - q)) ** 2).sum()
        standard_error = np.sqrt(variance / rounds)
        assert abs(counts.sum(axis=1).mean() - expected) <= 3 * standard_error


class TestRound:
    def test_full_links_aggregate_degree_plus_one(self, tiny_config: SimConfig) -> None:
        topology, sensors, global_test = _network(tiny_config)
        for t in range(1, 4):
            outcome = run_round(sensors, topology, LinkModel(), tiny_config.training, global_test, t)
            assert outcome.received_counts == topology.degrees()
            assert outcome.broadcasters == list(range(topology.n_sensors))

    def test_total_loss_keeps_trained_models(self, tiny_config: SimConfig) -> None:
        topology, sensors, global_test = _network(tiny_config)
        _, twins, _ = _network(tiny_config)
        run_round(sensors, topology, LinkModel(packet_loss_prob=1.0), tiny_config.training, global_test)
        for sensor, twin in zip(sensors, twins):
            expected, _ = train_local(twin.model, twin.optimizer, twin.train_data, tiny_config.training, twin.train_rng)
            assert sensor.model == expected

    def test_identical_models_fixed_point(self, tiny_config: SimConfig) -> None:
        topology, sensors, global_test = _network(tiny_config)
        shared = _model(42)
        for sensor in sensors:
            sensor.model = shared.copy()
            sensor.optimizer = init_optimizer(shared)
        run_round(sensors, topology, LinkModel(), TrainConfig(learning_rate=0.0), global_test)
        assert all(sensor.model == shared for sensor in sensors)

    def test_sensor_order_does_not_matter(self, tiny_config: SimConfig) -> None:
        topology, forward_order, global_test = _network(tiny_config)
        _, backward_order, _ = _network(tiny_config)
        link = LinkModel(packet_loss_prob=0.3, broadcast_prob=0.7)
        a = run_round(forward_order, topology, link, tiny_config.training, global_test)
        b = run_round(list(reversed(backward_order)), topology, link, tiny_config.training, global_test)
        assert a == b
        assert all(x.model == y.model for x, y in zip(forward_order, backward_order))

    def test_workers_match_serial(self, tiny_config: SimConfig) -> None:
        topology, serial, global_test = _network(tiny_config)
        _, threaded, _ = _network(tiny_config)
        a = run_round(serial, topology, LinkModel(), tiny_config.training, global_test)
        with ThreadPoolExecutor(max_workers=4) as pool:
            b = run_round(threaded, topology, LinkModel(), tiny_config.training, global_test, executor=pool)
        assert a == b
        assert all(x.model == y.model for x, y in zip(serial, threaded))

    def test_size_mismatch(self, tiny_config: SimConfig) -> None:
        topology, sensors, global_test = _network(tiny_config)
        with pytest.raises(ValueError):
            run_round(sensors[:-1], topology, LinkModel(), tiny_config.training, global_test)

    def test_empty_training_data(self, tiny_config: SimConfig) -> None:
        _, sensors, _ = _network(tiny_config)
        with pytest.raises(ValueError):
            SensorState(0, sensors[0].model, sensors[0].optimizer, FeatureDataset.empty(), sensors[0].test_data,
                        sensors[0].train_rng, sensors[0].link_rng)


class TestCentralized:
    def test_everyone_holds_the_global_model(self, tiny_config: SimConfig) -> None:
        _, sensors, global_test = _network(tiny_config)
        outcome = run_centralized_round(sensors, tiny_config.training, global_test)
        assert all(sensor.model == sensors[0].model for sensor in sensors)
        assert len(set(outcome.accuracies)) == 1

    def test_identical_clients_fixed_point(self, tiny_config: SimConfig) -> None:
        _, sensors, global_test = _network(tiny_config)
        shared = _model(3)
        for sensor in sensors:
            sensor.model = shared.copy()
        run_centralized_round(sensors, TrainConfig(learning_rate=0.0), global_test)
        assert sensors[0].model == shared

    def test_two_sensors(self, tiny_config: SimConfig) -> None:
        config = tiny_config.model_copy(
            update={"topology": TopologySpec(kind=TopologyKind.RANDOM, n_sensors=2, area=((100.0, 200.0), (100.0, 200.0)))}
        )
        _, sensors, global_test = _network(config)
        for t in range(1, 3):
            run_centralized_round(sensors, config.training, global_test, t)
            assert sensors[0].model == sensors[1].model


class TestSimulation:
    def test_round_zero_near_chance(self, tiny_config: SimConfig) -> None:
        config = tiny_config.model_copy(update={"dataset": DatasetConfig(samples_per_sensor=250)})
        result = run_simulation(config)
        assert result.initial_accuracy == pytest.approx(0.5, abs=0.1)
        assert result.outcomes[0].round_index == 0

    def test_deterministic(self, tiny_config: SimConfig) -> None:
        a = run_simulation(tiny_config)
        b = run_simulation(tiny_config, workers=3)
        assert a.outcomes == b.outcomes
        assert a.trace == b.trace
        assert a.models == b.models

    def test_converges_under_loose_rule(self, tiny_config: SimConfig) -> None:
        result = run_simulation(tiny_config)
        assert result.converged_at == 1
        assert result.detected_at == 3
        assert len(result.trace) == 3
        assert result.overhead.total_broadcasts == 15

    def test_not_converged_keeps_partial_result(self, tiny_config: SimConfig) -> None:
        config = tiny_config.model_copy(
            update={"convergence": ConvergenceConfig(epsilon=0.01, window=100), "max_rounds": 3}
        )
        with pytest.raises(NotConvergedError) as info:
            run_simulation(config)
        assert len(info.value.result.trace) == 3
        assert info.value.result.converged_at is None

    def test_overhead_counts_actual_broadcasts(self, tiny_config: SimConfig) -> None:
        p, rounds = 0.25, 30
        config = tiny_config.model_copy(
            update={
                "topology": TopologySpec(kind=TopologyKind.GRID),
                "dataset": DatasetConfig(samples_per_sensor=10),
                "link": LinkModel(broadcast_prob=p),
                "convergence": ConvergenceConfig(epsilon=0.01, window=100),
                "max_rounds": rounds,
            }
        )
        with pytest.raises(NotConvergedError) as info:
            run_simulation(config)
        result = info.value.result
        n_sensors = result.topology.n_sensors

        events = [b for outcome in result.outcomes[1:] for b in outcome.broadcasters]
        assert result.overhead.total_broadcasts == len(events)
        assert result.overhead.per_sensor_broadcasts == [events.count(i) for i in range(n_sensors)]
        assert result.outcomes[0].broadcasters == []

        trials = n_sensors * rounds
        sigma = math.sqrt(trials * p * (1 - p))
        assert abs(result.overhead.total_broadcasts - trials * p) <= 3 * sigma

    @pytest.mark.parametrize("scheme", [Scheme.CENTRALIZED, Scheme.FUSION])
    def test_reference_schemes(self, tiny_config: SimConfig, scheme: Scheme) -> None:
        result = simulate(tiny_config.model_copy(update={"scheme": scheme}))
        assert result.config.scheme is scheme
        assert all(model == result.models[0] for model in result.models)
        if scheme is Scheme.FUSION:
            assert result.overhead.total_broadcasts == 0


@pytest.mark.slow
class TestLearning:
    def test_grid_learns(self) -> None:
        bests = []
        for seed in range(5):
            config = SimConfig(max_rounds=1000, seed=seed)
            try:
                result = run_simulation(config)
            except NotConvergedError as e:
                result = e.result
            assert result.best_accuracy > result.initial_accuracy
            bests.append(result.best_accuracy)
        assert np.mean(bests) > 0.85

    def test_centralized_at_least_star(self) -> None:
        distributed, centralized = [], []
        for seed in range(3):
            base = SimConfig(topology=TopologySpec(kind=TopologyKind.STAR), max_rounds=1000, seed=seed)
            for scheme, sink in ((Scheme.DISTRIBUTED, distributed), (Scheme.CENTRALIZED, centralized)):
                try:
                    result = simulate(base.model_copy(update={"scheme": scheme}))
                except NotConvergedError as e:
                    result = e.result
                sink.append(result.trace.averages[-1])
        assert np.mean(centralized) >= np.mean(distributed)
