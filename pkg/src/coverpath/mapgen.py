"""Random map generation and the three shipped 15x15 maps.

Obstacles are drawn uniformly; draws that cut any free cell off from the rest
are rejected and redrawn. Stations are then placed by one of four layouts:

* ``strategic``: greedy k-center. The first station is the free cell with the
  smallest worst-case BFS distance to every other cell, each following one is
  the free cell farthest (BFS) from all stations chosen so far.
* ``random``: uniform over free cells.
* ``path_constrained``: uniform over free border cells, as if the chargers
  had to sit next to a field road running round the plot.
* ``sparse``: ``strategic`` with a third of the stations (rounded up).

The first station placed is the base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import List, Sequence

import numpy as np

from .gridworld import Cell, ConfigurationError, GridMap, bfs_distances, parse_map

MAX_RETRIES = 1000


class Layout(str, Enum):
    STRATEGIC = "strategic"
    RANDOM = "random"
    PATH_CONSTRAINED = "path_constrained"
    SPARSE = "sparse"


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MapSpec:
    size: int = 15
    density: float = 0.15
    stations: int = 4
    layout: Layout = Layout.STRATEGIC
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layout", Layout(self.layout))
        if self.size < 1:
            raise ConfigurationError("size must be >= 1")
        if not 0.0 <= self.density <= 0.5:
            raise ConfigurationError(f"density must be in [0, 0.5], got {self.density}")
        if self.stations < 1:
            raise ConfigurationError("stations must be >= 1")

    @property
    def obstacle_count(self) -> int:
        return int(math.floor(self.density * self.size * self.size + 1e-9))

    @property
    def station_count(self) -> int:
        if self.layout is Layout.SPARSE:
            return -(-self.stations // 3)
        return self.stations


def _connected(n: int, blocked: np.ndarray) -> bool:
    free = np.argwhere(~blocked)
    if len(free) == 0:
        return False
    seed_cell = tuple(free[0].tolist())
    probe = GridMap(n, frozenset(map(tuple, np.argwhere(blocked).tolist())), frozenset({seed_cell}), seed_cell)
    return len(probe.reachable_cells()) == len(free)


def _farthest_first(grid: GridMap, candidates: Sequence[Cell], k: int) -> List[Cell]:
    cand = sorted(candidates)
    # 1-center start: minimise the eccentricity over the whole free region
    best, best_ecc = None, None
    for c in cand:
        ecc = max(bfs_distances(grid, [c]).values())
        if best_ecc is None or ecc < best_ecc:
            best, best_ecc = c, ecc
    chosen = [best]
    while len(chosen) < min(k, len(cand)):
        dist = bfs_distances(grid, chosen)
        nxt = max((c for c in cand if c not in chosen), key=lambda c: (dist[c], -c[0], -c[1]))
        chosen.append(nxt)
    return chosen


def place_stations(grid: GridMap, layout: Layout, count: int, rng: np.random.Generator) -> List[Cell]:
    free = sorted(grid.reachable_cells())
    layout = Layout(layout)
    if layout in (Layout.STRATEGIC, Layout.SPARSE):
        return _farthest_first(grid, free, count)
    if layout is Layout.PATH_CONSTRAINED:
        n = grid.size
        pool = [c for c in free if c[0] in (0, n - 1) or c[1] in (0, n - 1)]
        if len(pool) < count:
            raise GenerationError("not enough free border cells for path-constrained stations")
    else:
        pool = free
    if len(pool) < count:
        raise GenerationError(f"cannot place {count} stations on {len(pool)} free cells")
    idx = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in idx]


def generate(spec: MapSpec) -> GridMap:
    """Sample a connected map for ``spec``; deterministic in ``spec.seed``."""
    n, k = spec.size, spec.obstacle_count
    if n * n - k < spec.station_count:
        raise GenerationError("too many obstacles to fit the stations")
    rng = np.random.default_rng(spec.seed)
    for attempt in range(MAX_RETRIES):
        blocked = np.zeros(n * n, dtype=bool)
        blocked[rng.choice(n * n, size=k, replace=False)] = True
        blocked = blocked.reshape(n, n)
        if _connected(n, blocked):
            break
    else:
        raise GenerationError(
            f"no connected layout after {MAX_RETRIES} draws (size={n}, obstacles={k}); lower the density"
        )
    obstacles = frozenset(map(tuple, np.argwhere(blocked).tolist()))
    free_cell = tuple(np.argwhere(~blocked)[0].tolist())
    skeleton = GridMap(n, obstacles, frozenset({free_cell}), free_cell)
    stations = place_stations(skeleton, spec.layout, spec.station_count, rng)
    meta = {
        "layout": spec.layout.value,
        "density": repr(spec.density),
        "stations": str(spec.stations),
        "seed": str(spec.seed),
        "attempts": str(attempt + 1),
    }
    return GridMap(n, obstacles, frozenset(stations), stations[0], metadata=meta)


def builtin_map_text(map_id: int) -> str:
    if map_id not in (1, 2, 3):
        raise ConfigurationError(f"unknown builtin map {map_id!r}; expected 1, 2 or 3")
    return resources.files("coverpath").joinpath("data", f"map{map_id}.map").read_text()


def builtin_map(map_id: int) -> GridMap:
    """Shipped 15x15 maps: 1 scattered, 2 clustered, 3 irregular strands."""
    return parse_map(builtin_map_text(map_id))


def min_pairwise_distance(cells: Sequence[Cell]) -> int:
    cells = list(cells)
    if len(cells) < 2:
        return 0
    return min(
        abs(a[0] - b[0]) + abs(a[1] - b[1]) for i, a in enumerate(cells) for b in cells[i + 1 :]
    )
