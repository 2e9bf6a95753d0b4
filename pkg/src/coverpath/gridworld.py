"""Grid environment for energy-constrained coverage.

The robot starts on a base charging station, moves one cell per step in one
of four directions, pays energy for every move, recharges passively whenever a
step ends on a station, and is rewarded for covering new cells while keeping
a feasible way back to a station.

Coordinates are ``(row, col)`` throughout.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

Cell = Tuple[int, int]

INFEASIBLE = float("inf")


class ConfigurationError(ValueError):
    """Invalid map or configuration."""


class UsageError(RuntimeError):
    """API misuse, e.g. stepping a finished episode."""


class Action(IntEnum):
    """Movement actions. North/South/West/East are synonyms."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    NORTH = 0
    SOUTH = 1
    WEST = 2
    EAST = 3


# (drow, dcol) indexed by action value
ACTION_DELTAS: Tuple[Cell, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))


class DoneReason(Enum):
    NONE = "none"
    COMPLETE = "complete"
    ENERGY_DEPLETED = "energy_depleted"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class GridMap:
    """Static world: obstacles, charging stations and the base station."""

    size: int
    obstacles: FrozenSet[Cell]
    stations: FrozenSet[Cell]
    base_station: Cell
    cell_length: float = 1.0
    d_max: Optional[float] = None
    metadata: Dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", frozenset(map(tuple, self.obstacles)))
        object.__setattr__(self, "stations", frozenset(map(tuple, self.stations)))
        object.__setattr__(self, "base_station", tuple(self.base_station))
        self.validate()

    def validate(self) -> None:
        n = self.size
        if n < 1:
            raise ConfigurationError("size must be >= 1")
        for r, c in self.obstacles | self.stations:
            if not (0 <= r < n and 0 <= c < n):
                raise ConfigurationError(f"cell {(r, c)} outside {n}x{n} grid")
        if not self.stations:
            raise ConfigurationError("map needs at least one station")
        if self.obstacles & self.stations:
            raise ConfigurationError("obstacles and stations overlap")
        if self.base_station not in self.stations:
            raise ConfigurationError("base_station must be a station")
        if self.cell_length <= 0:
            raise ConfigurationError("cell_length must be positive")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.size and 0 <= cell[1] < self.size

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.obstacles

    def neighbors(self, cell: Cell) -> Iterable[Cell]:
        r, c = cell
        for dr, dc in ACTION_DELTAS:
            nxt = (r + dr, c + dc)
            if self.is_free(nxt):
                yield nxt

    def obstacle_array(self) -> np.ndarray:
        a = np.zeros((self.size, self.size), dtype=bool)
        for cell in self.obstacles:
            a[cell] = True
        return a

    def station_array(self) -> np.ndarray:
        a = np.zeros((self.size, self.size), dtype=bool)
        for cell in self.stations:
            a[cell] = True
        return a

    # cached derived data; the map is immutable so these never go stale
    def reachable_cells(self) -> FrozenSet[Cell]:
        """Free cells connected to the base station (the coverage target)."""
        cached = self.__dict__.get("_reachable")
        if cached is None:
            cached = frozenset(bfs_distances(self, [self.base_station]))
            object.__setattr__(self, "_reachable", cached)
        return cached

    def station_distance(self) -> np.ndarray:
        """Shortest obstacle-free path length (in cells) to the nearest station.

        Unreachable cells and obstacles hold ``inf``.
        """
        cached = self.__dict__.get("_station_dist")
        if cached is None:
            cached = np.full((self.size, self.size), np.inf)
            for cell, d in bfs_distances(self, sorted(self.stations)).items():
                cached[cell] = d
            cached.setflags(write=False)
            object.__setattr__(self, "_station_dist", cached)
        return cached

    def check_playable(self) -> None:
        """Raise ConfigurationError if stations are cut off from the base."""
        reach = self.reachable_cells()
        lost = sorted(s for s in self.stations if s not in reach)
        if lost:
            raise ConfigurationError(f"stations unreachable from base: {lost}")

    def manhattan_to_station(self, cell: Cell) -> int:
        return min(abs(cell[0] - s[0]) + abs(cell[1] - s[1]) for s in self.stations)

    def d_max_violations(self) -> List[Cell]:
        """Reachable cells farther than d_max (Manhattan) from every station."""
        if self.d_max is None:
            return []
        return sorted(c for c in self.reachable_cells() if self.manhattan_to_station(c) > self.d_max)


def bfs_distances(grid: GridMap, sources: Iterable[Cell]) -> Dict[Cell, int]:
    """Multi-source 4-connected BFS over free cells."""
    dist: Dict[Cell, int] = {}
    queue: deque = deque()
    for s in sources:
        if grid.is_free(s) and s not in dist:
            dist[s] = 0
            queue.append(s)
    while queue:
        cur = queue.popleft()
        for nxt in grid.neighbors(cur):
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


def bfs_path(grid: GridMap, start: Cell, goals) -> Optional[List[Cell]]:
    """Shortest path from ``start`` to the first reached goal, inclusive of both ends."""
    goals = set(goals)
    if start in goals:
        return [start]
    prev: Dict[Cell, Optional[Cell]] = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in grid.neighbors(cur):
            if nxt in prev:
                continue
            prev[nxt] = cur
            if nxt in goals:
                path = [nxt]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path[::-1]
            queue.append(nxt)
    return None


def path_actions(path: List[Cell]) -> List[Action]:
    out = []
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        out.append(Action(ACTION_DELTAS.index((r1 - r0, c1 - c0))))
    return out


@dataclass(frozen=True)
class EnvConfig:
    e_max: float = 100.0
    eta_m: float = 1.0
    e_min: float = 10.0
    charge_rate: float = 5.0
    max_steps: Optional[int] = None  # None -> 4 * N**2
    psi1: float = 1.0
    psi2: float = 0.5
    psi3: float = 0.7
    reward_new: float = 1.0
    reward_revisit: float = -1.0
    safety_bonus: float = 0.5
    safety_penalty: float = -3.0

    def __post_init__(self):
        for name in ("e_max", "eta_m", "charge_rate", "psi1", "psi2", "psi3"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.e_min < 0 or self.e_min >= self.e_max:
            raise ConfigurationError("e_min must satisfy 0 <= e_min < e_max")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be positive")

    def horizon(self, grid: GridMap) -> int:
        return self.max_steps if self.max_steps is not None else 4 * grid.size**2


@dataclass(frozen=True)
class EnvState:
    position: Cell
    energy: float
    covered: np.ndarray  # (N, N) bool, read-only
    t: int = 0
    done_reason: DoneReason = DoneReason.NONE
    seed: int = 0

    @property
    def done(self) -> bool:
        return self.done_reason is not DoneReason.NONE

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return (
            self.position == other.position
            and self.energy == other.energy
            and self.t == other.t
            and self.done_reason == other.done_reason
            and self.seed == other.seed
            and np.array_equal(self.covered, other.covered)
        )

    __hash__ = None


@dataclass(frozen=True)
class RewardComponents:
    coverage: float
    energy: float
    safety: float


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    next_state_tensor: np.ndarray
    reward: float
    reward_components: RewardComponents
    done: bool
    done_reason: DoneReason
    energy_consumed: float
    new_cell: bool


def reward_from_components(comp: RewardComponents, config: EnvConfig) -> float:
    return config.psi1 * comp.coverage - config.psi2 * comp.energy + config.psi3 * comp.safety


def min_return_cost(grid: GridMap, pos: Cell, config: EnvConfig) -> float:
    """Energy of the cheapest obstacle-free path from ``pos`` to any station.

    Returns ``INFEASIBLE`` (``inf``) when no station is reachable.
    """
    if not grid.in_bounds(pos) or pos in grid.obstacles:
        raise UsageError(f"{pos} is not a free cell")
    d = grid.station_distance()[pos]
    if not np.isfinite(d):
        return INFEASIBLE
    return float(d) * config.eta_m * grid.cell_length


def is_safe_cell(grid: GridMap, pos: Cell, energy: float, config: EnvConfig) -> bool:
    if not grid.in_bounds(pos) or pos in grid.obstacles:
        return False
    return min_return_cost(grid, pos, config) <= energy


def state_tensor(grid: GridMap, state: EnvState) -> np.ndarray:
    """4 x N x N binary observation: obstacles, stations, position, coverage."""
    n = grid.size
    out = np.zeros((4, n, n), dtype=np.float64)
    out[0] = grid.obstacle_array()
    out[1] = grid.station_array()
    out[2][state.position] = 1.0
    out[3] = state.covered
    return out


def _is_complete(grid: GridMap, covered: np.ndarray, position: Cell) -> bool:
    return position in grid.stations and int(covered.sum()) == len(grid.reachable_cells())


def reset(grid: GridMap, config: EnvConfig = EnvConfig(), seed: int = 0) -> EnvState:
    grid.check_playable()
    covered = np.zeros((grid.size, grid.size), dtype=bool)
    covered[grid.base_station] = True
    covered.setflags(write=False)
    reason = DoneReason.COMPLETE if _is_complete(grid, covered, grid.base_station) else DoneReason.NONE
    return EnvState(grid.base_station, float(config.e_max), covered, 0, reason, int(seed))


def step(grid: GridMap, config: EnvConfig, state: EnvState, action: int) -> StepOutcome:
    if state.done:
        raise UsageError(f"episode already finished ({state.done_reason.value})")
    dr, dc = ACTION_DELTAS[int(action)]
    target = (state.position[0] + dr, state.position[1] + dc)
    consumed = config.eta_m * grid.cell_length
    energy = state.energy - consumed

    if grid.is_free(target):
        position = target
        new_cell = not state.covered[target]
    else:
        position = state.position
        new_cell = False

    if position in grid.stations:
        energy = min(energy + config.charge_rate, config.e_max)
    energy = max(energy, 0.0)

    covered = state.covered
    if new_cell:
        covered = covered.copy()
        covered[position] = True
        covered.setflags(write=False)

    coverage_term = config.reward_new if new_cell else config.reward_revisit
    safe = min_return_cost(grid, position, config) <= energy
    safety_term = config.safety_bonus if safe else config.safety_penalty
    comp = RewardComponents(coverage_term, consumed, safety_term)
    reward = reward_from_components(comp, config)

    t = state.t + 1
    if _is_complete(grid, covered, position):
        reason = DoneReason.COMPLETE
    elif energy <= 0:
        reason = DoneReason.ENERGY_DEPLETED
    elif t >= config.horizon(grid):
        reason = DoneReason.TRUNCATED
    else:
        reason = DoneReason.NONE

    nxt = EnvState(position, energy, covered, t, reason, state.seed)
    return StepOutcome(
        state=nxt,
        next_state_tensor=state_tensor(grid, nxt),
        reward=reward,
        reward_components=comp,
        done=reason is not DoneReason.NONE,
        done_reason=reason,
        energy_consumed=consumed,
        new_cell=new_cell,
    )


class GridWorld:
    """Stateful wrapper around :func:`reset` / :func:`step`."""

    def __init__(self, grid: GridMap, config: EnvConfig = EnvConfig()):
        grid.check_playable()
        self.grid = grid
        self.config = config
        self.state: Optional[EnvState] = None

    @property
    def n_actions(self) -> int:
        return len(ACTION_DELTAS)

    def reset(self, seed: int = 0) -> np.ndarray:
        self.state = reset(self.grid, self.config, seed)
        return state_tensor(self.grid, self.state)

    def step(self, action: int) -> StepOutcome:
        if self.state is None:
            raise UsageError("call reset() first")
        out = step(self.grid, self.config, self.state, action)
        self.state = out.state
        return out

    def observation(self) -> np.ndarray:
        return state_tensor(self.grid, self.state)


# ---------------------------------------------------------------------------
# map text format

_CELL_CHARS = {".", "#", "C", "B"}


def format_map(grid: GridMap) -> str:
    lines = [f"# {k}={v}" for k, v in sorted(grid.metadata.items())]
    lines.append(f"N={grid.size}")
    for r in range(grid.size):
        row = []
        for c in range(grid.size):
            cell = (r, c)
            if cell == grid.base_station:
                row.append("B")
            elif cell in grid.stations:
                row.append("C")
            elif cell in grid.obstacles:
                row.append("#")
            else:
                row.append(".")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def parse_map(text: str) -> GridMap:
    """Parse the map text format.

    Optional ``# key=value`` comment lines may precede the ``N=<int>`` header.
    Row lines contain only ``.#CB``; a comment is told apart from a row by the
    space after ``#``.
    """
    lines = text.splitlines()
    metadata: Dict[str, str] = {}
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        body = lines[i][2:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            metadata[k.strip()] = v.strip()
        i += 1
    if i >= len(lines) or not lines[i].startswith("N="):
        raise ConfigurationError("missing 'N=<int>' header")
    try:
        n = int(lines[i][2:])
    except ValueError:
        raise ConfigurationError(f"bad header {lines[i]!r}") from None
    if n < 1:
        raise ConfigurationError("N must be >= 1")
    rows = lines[i + 1:]
    if len(rows) != n:
        raise ConfigurationError(f"expected {n} rows, found {len(rows)}")
    obstacles, stations, bases = set(), set(), []
    for r, row in enumerate(rows):
        if len(row) != n:
            raise ConfigurationError(f"row {r} has {len(row)} chars, expected {n}")
        for c, ch in enumerate(row):
            if ch not in _CELL_CHARS:
                raise ConfigurationError(f"invalid character {ch!r} at row {r} col {c}")
            if ch == "#":
                obstacles.add((r, c))
            elif ch in "CB":
                stations.add((r, c))
                if ch == "B":
                    bases.append((r, c))
    if len(bases) != 1:
        raise ConfigurationError(f"expected exactly one base station 'B', found {len(bases)}")
    return GridMap(n, frozenset(obstacles), frozenset(stations), bases[0], metadata=metadata)


def load_map(path) -> GridMap:
    return parse_map(Path(path).read_text())


def save_map(grid: GridMap, path) -> None:
    Path(path).write_text(format_map(grid))


def with_config(config: EnvConfig, **changes) -> EnvConfig:
    return replace(config, **changes)
