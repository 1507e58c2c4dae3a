"""
Canned experiment suites: topology comparison, packet loss, broadcast probability
and the scheme baseline, each repeated over seeds and summarized as mean +/- std.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import pandas as pd
from pydantic import BaseModel, Field

from fedsense.errors import NotConvergedError
from fedsense.protocol import SimulationResult, simulate
from fedsense.sim_models import Scheme, SimConfig, TopologyKind

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
TOPOLOGY_ORDER = (TopologyKind.LINE, TopologyKind.RING, TopologyKind.STAR, TopologyKind.GRID, TopologyKind.RANDOM)
LOSS_LEVELS = (0.0, 0.05, 0.20, 0.50)
BROADCAST_LEVELS = (1.0, 0.5, 0.25, 0.10)
SCHEME_ORDER = (Scheme.DISTRIBUTED, Scheme.CENTRALIZED, Scheme.FUSION)

TABLE_COLUMNS = [
    "label",
    "time_mean",
    "time_std",
    "best_accuracy_mean",
    "best_accuracy_std",
    "total_broadcasts_mean",
    "runs",
    "not_converged",
]
CURVE_COLUMNS = ["label", "seed", "round", "avg_accuracy", "best_accuracy"]

logger = logging.getLogger(__name__)


class SuiteName(str, Enum):
    TOPOLOGY = "topology"
    LOSS = "loss"
    BROADCAST = "broadcast"
    BASELINE = "baseline"


class SuiteCell(BaseModel):
    """One row of a suite table: a label and the config it runs (seed set per run)."""
    label: str
    config: SimConfig


class ExperimentSuite(BaseModel):
    """Configs that differ in one factor, each run once per seed."""
    name: SuiteName
    factor: str = Field(..., description="Column heading of the varied factor.")
    cells: List[SuiteCell]
    seeds: List[int]


class RunSummary(BaseModel):
    label: str
    seed: int
    converged_at: Optional[int] = None
    best_accuracy: float
    final_accuracy: float
    total_broadcasts: int
    rounds_run: int


@dataclass
class SuiteResult:
    suite: ExperimentSuite
    runs: List[RunSummary]
    table: pd.DataFrame
    curves: pd.DataFrame


# === SUITE DEFINITIONS ===

def _with_topology(base: SimConfig, kind: TopologyKind) -> SimConfig:
    return base.model_copy(update={"topology": base.topology.model_copy(update={"kind": kind})})


def _with_link(base: SimConfig, **link: float) -> SimConfig:
    return base.model_copy(update={"link": base.link.model_copy(update=link)})


def topology_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None) -> ExperimentSuite:
    base = base or SimConfig()
    return ExperimentSuite(
        name=SuiteName.TOPOLOGY,
        factor="Topology",
        cells=[SuiteCell(label=kind.value, config=_with_topology(base, kind)) for kind in TOPOLOGY_ORDER],
        seeds=list(seeds),
    )


def loss_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None) -> ExperimentSuite:
    base = _with_topology(base or SimConfig(), TopologyKind.RANDOM)
    return ExperimentSuite(
        name=SuiteName.LOSS,
        factor="Loss probability",
        cells=[
            SuiteCell(label=f"{p:.2f}", config=_with_link(base, packet_loss_prob=p)) for p in LOSS_LEVELS
        ],
        seeds=list(seeds),
    )


def broadcast_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None) -> ExperimentSuite:
    base = _with_topology(base or SimConfig(), TopologyKind.RANDOM)
    return ExperimentSuite(
        name=SuiteName.BROADCAST,
        factor="Broadcast probability",
        cells=[
            SuiteCell(label=f"{p:.2f}", config=_with_link(base, broadcast_prob=p)) for p in BROADCAST_LEVELS
        ],
        seeds=list(seeds),
    )


def baseline_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None) -> ExperimentSuite:
    """Distributed learning on the star against the client-server and data-fusion schemes."""
    base = _with_topology(base or SimConfig(), TopologyKind.STAR)
    return ExperimentSuite(
        name=SuiteName.BASELINE,
        factor="Scheme",
        cells=[
            SuiteCell(label=scheme.value, config=base.model_copy(update={"scheme": scheme}))
            for scheme in SCHEME_ORDER
        ],
        seeds=list(seeds),
    )


_SUITES = {
    SuiteName.TOPOLOGY: topology_suite,
    SuiteName.LOSS: loss_suite,
    SuiteName.BROADCAST: broadcast_suite,
    SuiteName.BASELINE: baseline_suite,
}


def build_suite(name: SuiteName, seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None) -> ExperimentSuite:
    if not seeds:
        raise ValueError("a suite needs at least one seed")
    return _SUITES[SuiteName(name)](seeds, base)


def config_diff(a: SimConfig, b: SimConfig) -> Set[str]:
    """Dotted paths of the fields whose values differ between two configs."""

    def walk(x: Any, y: Any, prefix: str) -> Set[str]:
        if isinstance(x, dict) and isinstance(y, dict):
            out: Set[str] = set()
            for key in sorted(set(x) | set(y)):
                out |= walk(x.get(key), y.get(key), f"{prefix}{key}.")
            return out
        return set() if x == y else {prefix.rstrip(".")}

    return walk(a.model_dump(mode="json"), b.model_dump(mode="json"), "")


# === RUNNING ===

def _run_one(label: str, config: SimConfig) -> Tuple[RunSummary, List[Dict[str, Any]]]:
    try:
        result: SimulationResult = simulate(config, workers=1, log_every=0)
    except NotConvergedError as e:
        logger.warning(f"{label} (seed {config.seed}): {e}")
        result = e.result

    summary = RunSummary(
        label=label,
        seed=config.seed,
        converged_at=result.converged_at,
        best_accuracy=result.trace.best,
        final_accuracy=result.trace.averages[-1],
        total_broadcasts=result.overhead.total_broadcasts,
        rounds_run=len(result.trace),
    )
    curve = [
        {"label": label, "seed": config.seed, "round": t, "avg_accuracy": avg, "best_accuracy": best}
        for t, (avg, best) in enumerate(zip(result.trace.averages, result.trace.bests), start=1)
    ]
    return summary, curve


def summarize(suite: ExperimentSuite, runs: Sequence[RunSummary]) -> pd.DataFrame:
    """Per-cell mean and population std over seeds; non-converged runs count as NaN time."""
    frame = pd.DataFrame(
        {
            "label": [r.label for r in runs],
            "time": [math.nan if r.converged_at is None else float(r.converged_at) for r in runs],
            "best_accuracy": [r.best_accuracy for r in runs],
            "total_broadcasts": [float(r.total_broadcasts) for r in runs],
        }
    )
    rows = []
    for cell in suite.cells:
        group = frame[frame["label"] == cell.label]
        rows.append(
            {
                "label": cell.label,
                "time_mean": group["time"].mean(),
                "time_std": group["time"].std(ddof=0),
                "best_accuracy_mean": group["best_accuracy"].mean(),
                "best_accuracy_std": group["best_accuracy"].std(ddof=0),
                "total_broadcasts_mean": group["total_broadcasts"].mean(),
                "runs": len(group),
                "not_converged": int(group["time"].isna().sum()),
            }
        )
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def run_suite(suite: ExperimentSuite, workers: int = 1) -> SuiteResult:
    """
    Run every (cell, seed) pair and assemble the comparison table.

    Cells run in a thread pool of the given size; assembly order is fixed, so the
    output does not depend on it.
    """
    jobs = [
        (cell.label, cell.config.model_copy(update={"seed": seed}))
        for cell in suite.cells
        for seed in suite.seeds
    ]
    logger.info(f"Running {suite.name.value} suite: {len(suite.cells)} cells x {len(suite.seeds)} seeds")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda job: _run_one(*job), jobs))
    else:
        outputs = [_run_one(*job) for job in jobs]

    runs = [summary for summary, _ in outputs]
    curves = pd.DataFrame([row for _, curve in outputs for row in curve], columns=CURVE_COLUMNS)
    return SuiteResult(suite=suite, runs=runs, table=summarize(suite, runs), curves=curves)


def run_topology_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None, workers: int = 1) -> SuiteResult:
    return run_suite(topology_suite(seeds, base), workers)


def run_loss_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None, workers: int = 1) -> SuiteResult:
    return run_suite(loss_suite(seeds, base), workers)


def run_broadcast_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None, workers: int = 1) -> SuiteResult:
    return run_suite(broadcast_suite(seeds, base), workers)


def run_baseline_suite(seeds: Sequence[int] = DEFAULT_SEEDS, base: Optional[SimConfig] = None, workers: int = 1) -> SuiteResult:
    return run_suite(baseline_suite(seeds, base), workers)


# === OUTPUT ===

def _mean_std(mean: float, std: float, digits: int) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def to_markdown(result: SuiteResult) -> str:
    """Factor | Time | Best average accuracy table, mean ± std over seeds."""
    lines = [
        f"| {result.suite.factor} | Time | Best average accuracy |",
        "|---|---|---|",
    ]
    for row in result.table.itertuples(index=False):
        time = _mean_std(row.time_mean, row.time_std, 1)
        if row.not_converged:
            time += f" ({row.not_converged}/{row.runs} not converged)"
        lines.append(f"| {row.label} | {time} | {_mean_std(row.best_accuracy_mean, row.best_accuracy_std, 4)} |")
    return "\n".join(lines) + "\n"


def write_suite(result: SuiteResult, out_dir: Path) -> List[Path]:
    """Write <suite>.md, <suite>.csv, <suite>_runs.csv and <suite>_curves.csv."""
    out_dir.mkdir(parents=True, exist_ok=True)
    name = result.suite.name.value
    paths = [out_dir / f"{name}.md", out_dir / f"{name}.csv", out_dir / f"{name}_runs.csv", out_dir / f"{name}_curves.csv"]
    paths[0].write_text(to_markdown(result))
    result.table.to_csv(paths[1], index=False)
    pd.DataFrame([r.model_dump() for r in result.runs]).to_csv(paths[2], index=False)
    result.curves.to_csv(paths[3], index=False)
    logger.info(f"Wrote {name} suite tables to {out_dir}")
    return paths
