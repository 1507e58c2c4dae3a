"""
Accuracy traces, the best-average-accuracy convergence rule and communication
overhead accounting.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import pandas as pd

from fedsense.sim_models import AccuracyTrace, ConvergenceConfig, OverheadReport, RoundOutcome

METRICS_COLUMNS = ["round", "avg_accuracy", "best_accuracy", "broadcasts", "received_total"]

logger = logging.getLogger(__name__)


def update_trace(trace: AccuracyTrace, avg_accuracy: float) -> AccuracyTrace:
    """
    Append one round's average accuracy and extend the running best.

    Args:
        trace: Trace of rounds 1..t-1
        avg_accuracy: Average accuracy of round t, in [0, 1]

    Returns:
        New trace covering rounds 1..t
    """
    if not 0.0 <= avg_accuracy <= 1.0:
        raise ValueError(f"average accuracy must lie in [0, 1], got {avg_accuracy}")
    best = avg_accuracy if not trace.bests else max(trace.bests[-1], avg_accuracy)
    return AccuracyTrace(averages=trace.averages + [avg_accuracy], bests=trace.bests + [best])


def check_convergence(trace: AccuracyTrace, cfg: ConvergenceConfig) -> Optional[int]:
    """
    First round t (1-based) after which the best average accuracy gains less than
    epsilon over the next M rounds.

    Returns:
        The anchor round t, or None while no such t exists (t + M must already be recorded)
    """
    bests = trace.bests
    for t in range(1, len(bests) - cfg.window + 1):
        # bests never decrease, so the gain over the window is its last step minus its anchor
        if bests[t - 1 + cfg.window] - bests[t - 1] < cfg.epsilon:
            return t
    return None


def record_overhead(
    report: OverheadReport,
    broadcasters: Sequence[int],
    packet_bytes: int,
    unit_energy: float = 1.0,
) -> OverheadReport:
    """
    Add one round of broadcasts to the overhead report.

    Args:
        report: Accumulated report
        broadcasters: Ids of the sensors that broadcast this round
        packet_bytes: Size of one model packet
        unit_energy: Transmit-energy units spent per broadcast

    Returns:
        Updated report
    """
    per_sensor = list(report.per_sensor_broadcasts)
    for sensor in broadcasters:
        if sensor >= len(per_sensor):
            per_sensor.extend([0] * (sensor + 1 - len(per_sensor)))
        per_sensor[sensor] += 1
    count = len(broadcasters)
    return OverheadReport(
        total_broadcasts=report.total_broadcasts + count,
        per_sensor_broadcasts=per_sensor,
        bytes_transmitted=report.bytes_transmitted + count * packet_bytes,
        energy=report.energy + count * unit_energy,
    )


# === EXPORT ===

def metrics_frame(outcomes: Sequence[RoundOutcome], trace: AccuracyTrace) -> pd.DataFrame:
    """One row per training round (round 0, the untrained models, is not a trace entry)."""
    rows = [o for o in outcomes if o.round_index > 0]
    return pd.DataFrame(
        {
            "round": [o.round_index for o in rows],
            "avg_accuracy": [o.average_accuracy for o in rows],
            "best_accuracy": trace.bests[: len(rows)],
            "broadcasts": [len(o.broadcasters) for o in rows],
            "received_total": [o.received_total for o in rows],
        },
        columns=METRICS_COLUMNS,
    )


def write_metrics_csv(outcomes: Sequence[RoundOutcome], trace: AccuracyTrace, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics_frame(outcomes, trace).to_csv(path, index=False)
    logger.info(f"Wrote metrics for {len(trace)} rounds to {path}")
    return path


def summary_dict(
    trace: AccuracyTrace,
    overhead: OverheadReport,
    cfg: ConvergenceConfig,
    initial_accuracy: Optional[float] = None,
) -> Dict[str, Any]:
    """Run summary; both the anchor round and the round the rule fired are reported."""
    converged_at = check_convergence(trace, cfg)
    return {
        "converged_at": converged_at,
        "detected_at": None if converged_at is None else converged_at + cfg.window,
        "rounds_run": len(trace),
        "initial_accuracy": initial_accuracy,
        "best_accuracy": trace.best,
        "final_accuracy": trace.averages[-1] if trace.averages else None,
        "total_broadcasts": overhead.total_broadcasts,
        "bytes": overhead.bytes_transmitted,
        "energy": overhead.energy,
    }


def write_summary_json(summary: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2))
    return path

