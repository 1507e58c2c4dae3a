"""Tests for accuracy traces, convergence detection and overhead accounting."""

import json
import math

import numpy as np
import pandas as pd
import pytest

from fedsense.metrics import (
    METRICS_COLUMNS,
    check_convergence,
    metrics_frame,
    record_overhead,
    summary_dict,
    update_trace,
    write_metrics_csv,
    write_summary_json,
)
from fedsense.sim_models import AccuracyTrace, ConvergenceConfig, OverheadReport, RoundOutcome

DEFAULT_RULE = ConvergenceConfig(epsilon=0.01, window=100)


def trace_of(averages) -> AccuracyTrace:
    trace = AccuracyTrace()
    for a in averages:
        trace = update_trace(trace, a)
    return trace


class TestTrace:
    def test_best_holds_on_drop(self) -> None:
        assert trace_of([0.5, 0.4]).bests == [0.5, 0.5]

    def test_first_entry(self) -> None:
        trace = trace_of([0.5])
        assert trace.best == 0.5
        assert len(trace) == 1

    def test_running_max(self) -> None:
        assert trace_of([0.5, 0.6, 0.55, 0.7]).bests == [0.5, 0.6, 0.6, 0.7]

    def test_range_error(self) -> None:
        with pytest.raises(ValueError):
            update_trace(AccuracyTrace(), 1.2)

    def test_empty_trace_has_no_best(self) -> None:
        assert AccuracyTrace().best is None


class TestConvergence:
    def test_constant_trace(self) -> None:
        assert check_convergence(trace_of([0.6] * 101), DEFAULT_RULE) == 1

    def test_too_short(self) -> None:
        assert check_convergence(trace_of([0.6] * 100), DEFAULT_RULE) is None

    def test_strictly_increasing(self) -> None:
        averages = [min(0.02 * t, 1.0) for t in range(1, 50)]
        assert check_convergence(trace_of(averages), ConvergenceConfig(epsilon=0.01, window=5)) is None

    def test_rise_then_plateau(self) -> None:
        rise = list(np.linspace(0.5, 0.9, 10))
        assert check_convergence(trace_of(rise + [0.9] * 100), DEFAULT_RULE) == 10

    def test_stable_once_converged(self) -> None:
        averages = list(np.linspace(0.5, 0.9, 10)) + [0.9] * 100
        first = check_convergence(trace_of(averages), DEFAULT_RULE)
        extended = check_convergence(trace_of(averages + [0.95] * 30), DEFAULT_RULE)
        assert extended is not None and extended <= first


class TestOverhead:
    def test_one_full_round(self) -> None:
        report = record_overhead(OverheadReport.empty(20), list(range(20)), packet_bytes=100)
        assert report.total_broadcasts == 20
        assert report.bytes_transmitted == 2000
        assert report.energy == 20.0
        assert report.per_sensor_broadcasts == [1] * 20

    def test_zero_rounds(self) -> None:
        report = OverheadReport.empty(5)
        assert report.total_broadcasts == 0
        assert report.bytes_transmitted == 0

    def test_totals_match_per_sensor(self) -> None:
        report = OverheadReport.empty(3)
        for broadcasters in ([0, 2], [1], [], [0, 1, 2]):
            report = record_overhead(report, broadcasters, packet_bytes=10, unit_energy=0.5)
        assert report.per_sensor_broadcasts == [2, 2, 2]
        assert report.total_broadcasts == sum(report.per_sensor_broadcasts) == 6
        assert report.bytes_transmitted == 60
        assert report.energy == 3.0

    def test_binomial_broadcast_count(self) -> None:
        rng = np.random.default_rng(0)
        p, rounds, sensors = 0.25, 1000, 20
        report = OverheadReport.empty(sensors)
        for _ in range(rounds):
            report = record_overhead(report, list(np.flatnonzero(rng.random(sensors) < p)), packet_bytes=1)
        sigma = math.sqrt(sensors * rounds * p * (1 - p))
        assert abs(report.total_broadcasts - sensors * rounds * p) <= 3 * sigma


class TestExport:
    def _outcomes(self):
        return [
            RoundOutcome(round_index=0, received_counts=[0, 0], accuracies=[0.5, 0.5], average_accuracy=0.5),
            RoundOutcome(round_index=1, received_counts=[1, 1], broadcasters=[0, 1], accuracies=[0.6, 0.8], average_accuracy=0.7),
            RoundOutcome(round_index=2, received_counts=[1, 0], broadcasters=[1], accuracies=[0.6, 0.6], average_accuracy=0.6),
        ]

    def test_metrics_frame_skips_round_zero(self) -> None:
        frame = metrics_frame(self._outcomes(), trace_of([0.7, 0.6]))
        assert list(frame.columns) == METRICS_COLUMNS
        assert frame["round"].tolist() == [1, 2]
        assert frame["best_accuracy"].tolist() == [0.7, 0.7]
        assert frame["broadcasts"].tolist() == [2, 1]
        assert frame["received_total"].tolist() == [2, 1]

    def test_csv_and_summary(self, tmp_path) -> None:
        trace = trace_of([0.7, 0.6])
        write_metrics_csv(self._outcomes(), trace, tmp_path / "metrics.csv")
        assert len(pd.read_csv(tmp_path / "metrics.csv")) == 2

        overhead = record_overhead(OverheadReport.empty(2), [0, 1], packet_bytes=8)
        summary = summary_dict(trace, overhead, ConvergenceConfig(epsilon=0.5, window=1), 0.5)
        write_summary_json(summary, tmp_path / "summary.json")
        loaded = json.loads((tmp_path / "summary.json").read_text())
        assert loaded["converged_at"] == 1
        assert loaded["detected_at"] == 2
        assert loaded["best_accuracy"] == 0.7
        assert loaded["total_broadcasts"] == 2
        assert loaded["bytes"] == 16

    def test_average_must_match(self) -> None:
        with pytest.raises(ValueError):
            RoundOutcome(round_index=1, accuracies=[0.5, 0.7], average_accuracy=0.5)
