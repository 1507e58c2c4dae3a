"""
Sensor network topologies: fixed layouts (line, ring, star, grid), random layouts,
range-based adjacency and multi-hop connectivity.
"""

import json
import logging
import math
from collections import deque
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from fedsense.errors import TopologyError
from fedsense.sim_models import TopologyKind, TopologySpec

COMM_RANGE = 400.0
# Star spokes are exactly COMM_RANGE long; trig round-off must not drop them.
EDGE_TOLERANCE = 1e-9

GRID_SIDE = 4
GRID_SPACING = 300.0
GRID_ORIGIN = 100.0
STAR_CENTER = (500.0, 500.0)
STAR_RADIUS = 400.0
STAR_ARMS = 5
LINE_POSITIONS = [(100.0, 100.0), (300.0, 300.0), (500.0, 500.0), (700.0, 700.0), (900.0, 900.0)]
RANDOM_AREA = ((100.0, 1000.0), (100.0, 1000.0))

Position = Tuple[float, float]

logger = logging.getLogger(__name__)


class Topology(BaseModel):
    """Sensor positions plus the symmetric neighbor lists they induce."""
    kind: TopologyKind
    comm_range: float
    positions: List[Position]
    adjacency: List[List[int]]

    model_config = ConfigDict(frozen=True)

    @property
    def n_sensors(self) -> int:
        return len(self.positions)

    def neighbors(self, sensor: int) -> List[int]:
        return self.adjacency[sensor]

    def degree(self, sensor: int) -> int:
        return len(self.adjacency[sensor])

    def degrees(self) -> List[int]:
        return [len(n) for n in self.adjacency]

    def edges(self) -> List[Tuple[int, int]]:
        return [(a, b) for a, nbrs in enumerate(self.adjacency) for b in nbrs if a < b]


def from_positions(kind: TopologyKind, positions: Sequence[Position], comm_range: float = COMM_RANGE) -> Topology:
    """Build a topology whose edges are every pair within communication range."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    linked = dist <= comm_range + EDGE_TOLERANCE
    np.fill_diagonal(linked, False)
    adjacency = [np.flatnonzero(row).tolist() for row in linked]
    return Topology(
        kind=kind,
        comm_range=comm_range,
        positions=[(float(x), float(y)) for x, y in pts],
        adjacency=adjacency,
    )


def is_connected(topology: Topology) -> bool:
    """Breadth-first reachability of every sensor from sensor 0."""
    if topology.n_sensors <= 1:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nbr in topology.adjacency[node]:
            if nbr not in seen:
                seen.add(nbr)
                queue.append(nbr)
    return len(seen) == topology.n_sensors


# === FIXED LAYOUTS ===

def _grid_positions() -> List[Position]:
    return [
        (GRID_ORIGIN + GRID_SPACING * i, GRID_ORIGIN + GRID_SPACING * j)
        for i in range(GRID_SIDE)
        for j in range(GRID_SIDE)
    ]


def build_line(comm_range: float = COMM_RANGE) -> Topology:
    """Five sensors on the diagonal, 282.84 apart."""
    return from_positions(TopologyKind.LINE, LINE_POSITIONS, comm_range)


def build_grid(comm_range: float = COMM_RANGE) -> Topology:
    """4x4 sensors at (100 + 300i, 100 + 300j); sensor index is 4i + j."""
    return from_positions(TopologyKind.GRID, _grid_positions(), comm_range)


def build_ring(comm_range: float = COMM_RANGE) -> Topology:
    """The 12 perimeter sensors of the 4x4 grid, numbered in walking order around the ring."""
    last = GRID_SIDE - 1
    cells = (
        [(i, 0) for i in range(GRID_SIDE)]
        + [(last, j) for j in range(1, GRID_SIDE)]
        + [(i, last) for i in range(last - 1, -1, -1)]
        + [(0, j) for j in range(last - 1, 0, -1)]
    )
    positions = [(GRID_ORIGIN + GRID_SPACING * i, GRID_ORIGIN + GRID_SPACING * j) for i, j in cells]
    return from_positions(TopologyKind.RING, positions, comm_range)


def build_star(comm_range: float = COMM_RANGE) -> Topology:
    """Center sensor 0 at (500, 500) and five outer sensors at 72k degrees, radius 400."""
    cx, cy = STAR_CENTER
    positions = [STAR_CENTER] + [
        (cx + STAR_RADIUS * math.cos(math.radians(72 * k)), cy + STAR_RADIUS * math.sin(math.radians(72 * k)))
        for k in range(STAR_ARMS)
    ]
    return from_positions(TopologyKind.STAR, positions, comm_range)


def build_random(
    n: int,
    area: Tuple[Tuple[float, float], Tuple[float, float]] = RANDOM_AREA,
    comm_range: float = COMM_RANGE,
    rng: Optional[np.random.Generator] = None,
    max_attempts: int = 1000,
) -> Topology:
    """
    Draw n uniform positions, redrawing the whole layout until it is connected.

    Args:
        n: Number of sensors (at least 2)
        area: ((x_min, x_max), (y_min, y_max))
        comm_range: Communication range
        rng: Random source
        max_attempts: Layout draws before giving up

    Returns:
        A connected Topology

    Raises:
        TopologyError: if no connected layout was drawn within max_attempts
    """
    if n < 2:
        raise ValueError("a random topology needs at least 2 sensors")
    rng = rng if rng is not None else np.random.default_rng()
    (x_min, x_max), (y_min, y_max) = area

    for attempt in range(1, max_attempts + 1):
        xs = rng.uniform(x_min, x_max, size=n)
        ys = rng.uniform(y_min, y_max, size=n)
        topology = from_positions(TopologyKind.RANDOM, list(zip(xs, ys)), comm_range)
        if is_connected(topology):
            logger.info(f"Random topology with {n} sensors connected after {attempt} draw(s)")
            return topology

    raise TopologyError(
        f"No connected layout of {n} sensors in {area} with range {comm_range} after {max_attempts} draws"
    )


_BUILDERS = {
    TopologyKind.LINE: build_line,
    TopologyKind.RING: build_ring,
    TopologyKind.STAR: build_star,
    TopologyKind.GRID: build_grid,
}


def build_topology(spec: TopologySpec, rng: Optional[np.random.Generator] = None) -> Topology:
    """
    Build (or load) the topology a spec describes and check it is connected.

    Raises:
        TopologyError: if the result is not connected
    """
    if spec.path:
        topology = load_topology(Path(spec.path))
    elif spec.kind is TopologyKind.RANDOM:
        topology = build_random(spec.n_sensors, spec.area, spec.comm_range, rng, spec.max_attempts)
    else:
        topology = _BUILDERS[spec.kind](spec.comm_range)

    if not is_connected(topology):
        raise TopologyError(f"{topology.kind.value} topology with range {topology.comm_range} is disconnected")

    logger.info(
        f"Built {topology.kind.value} topology: {topology.n_sensors} sensors, {len(topology.edges())} links"
    )
    return topology


# === EXPORT / IMPORT ===

def topology_to_json(topology: Topology) -> Dict[str, Any]:
    return {
        "kind": topology.kind.value,
        "comm_range": topology.comm_range,
        "positions": [[x, y] for x, y in topology.positions],
        "edges": [[a, b] for a, b in topology.edges()],
    }


def topology_from_json(data: Dict[str, Any]) -> Topology:
    """
    Rebuild a topology from its JSON export.

    Adjacency is recomputed from positions and range; stored edges that disagree are
    reported but not trusted.
    """
    topology = from_positions(
        TopologyKind(data["kind"]),
        [tuple(p) for p in data["positions"]],
        float(data["comm_range"]),
    )
    stored = sorted(tuple(sorted(e)) for e in data.get("edges", []))
    if "edges" in data and stored != topology.edges():
        logger.warning("Stored topology edges disagree with the communication range; using recomputed edges")
    return topology


def save_topology(topology: Topology, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(topology_to_json(topology), indent=2))
    return path


def load_topology(path: Path) -> Topology:
    with open(path, "r") as f:
        return topology_from_json(json.load(f))
