"""Heuristic coverage planners (RRT, ACO, PSO) with a shared energy guard.

All three only decide *which cell to head for next* and *how to get there*.
Execution goes through :class:`GuardedExecutor`, which steps the real
environment and, before every leg, checks that after the leg the robot could
still reach a station with at least ``e_min`` to spare. When it could not,
the robot detours to the nearest station, charges, and retries from there;
targets that stay out of reach even on a full battery are dropped.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .gridworld import (
    ACTION_DELTAS,
    Action,
    Cell,
    EnvConfig,
    EnvState,
    GridMap,
    StepOutcome,
    reset,
    step,
)
from .metrics import EpisodeStats, EpisodeTracker, Summary, aggregate

ALGORITHMS = ("rrt", "aco", "pso")


@dataclass(frozen=True)
class PlannerConfig:
    algorithm: str = "rrt"
    iterations: int = 30
    seed: int = 0
    # ACO
    ants: int = 8
    evaporation: float = 0.1
    pheromone_weight: float = 1.0
    heuristic_weight: float = 3.0
    pheromone_floor: float = 1e-6
    # PSO
    swarm_size: int = 8
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    violation_penalty: float = 10.0
    # RRT
    max_nodes: int = 400
    goal_bias: float = 0.2

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown planner {self.algorithm!r}; expected one of {ALGORITHMS}")
        for name in ("iterations", "ants", "swarm_size", "max_nodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("evaporation", "goal_bias"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.pheromone_floor <= 0:
            raise ValueError("pheromone_floor must be positive")


@dataclass
class PlanResult:
    actions: List[int]
    trace: List[EnvState]
    stats: EpisodeStats
    info: Dict[str, object] = field(default_factory=dict)


class PathTable:
    """All-pairs BFS distances and predecessors over the reachable cells."""

    def __init__(self, grid: GridMap):
        self.grid = grid
        self.cells: List[Cell] = sorted(grid.reachable_cells())
        self.index = {c: i for i, c in enumerate(self.cells)}
        n = len(self.cells)
        self.dist = np.full((n, n), np.iinfo(np.int32).max, dtype=np.int64)
        self.prev = np.full((n, n), -1, dtype=np.int64)
        nbrs = [[self.index[m] for m in grid.neighbors(c)] for c in self.cells]
        for s in range(n):
            d, p = self.dist[s], self.prev[s]
            d[s] = 0
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in nbrs[u]:
                    if p[v] == -1 and v != s:
                        p[v] = u
                        d[v] = d[u] + 1
                        queue.append(v)
        station_idx = [self.index[s] for s in grid.stations if s in self.index]
        self.station_idx = np.array(sorted(station_idx), dtype=np.int64)
        self.to_station = self.dist[:, self.station_idx].min(axis=1)
        self.nearest_station = self.station_idx[self.dist[:, self.station_idx].argmin(axis=1)]

    def path(self, a: int, b: int) -> List[int]:
        """Indices along a shortest path a -> b, both ends included."""
        out = [b]
        while out[-1] != a:
            out.append(int(self.prev[a, out[-1]]))
        return out[::-1]


class GuardedExecutor:
    """Steps the environment along planned legs under the shared energy guard."""

    def __init__(self, grid: GridMap, config: EnvConfig, table: Optional[PathTable] = None, seed: int = 0):
        self.grid = grid
        self.config = config
        self.table = table if table is not None else PathTable(grid)
        self.state = reset(grid, config, seed)
        self.trace: List[EnvState] = [self.state]
        self.actions: List[int] = []
        self.tracker = EpisodeTracker.for_env(grid, config)
        self.move_cost = config.eta_m * grid.cell_length
        self.dropped: List[Cell] = []

    @property
    def done(self) -> bool:
        return self.state.done

    @property
    def pos_index(self) -> int:
        return self.table.index[self.state.position]

    def covered(self, cell: Cell) -> bool:
        return bool(self.state.covered[cell])

    def _move(self, action: int) -> StepOutcome:
        out = step(self.grid, self.config, self.state, action)
        self.state = out.state
        self.actions.append(int(action))
        self.trace.append(out.state)
        self.tracker.record(out)
        return out

    def follow(self, cells: Sequence[Cell]) -> None:
        """Walk a 4-connected cell sequence starting at the current position."""
        for nxt in cells[1:]:
            if self.done:
                return
            r, c = self.state.position
            self._move(ACTION_DELTAS.index((nxt[0] - r, nxt[1] - c)))

    def leg_ok(self, leg_cells: Sequence[Cell]) -> bool:
        leg = (len(leg_cells) - 1) * self.move_cost
        back = self.table.to_station[self.table.index[leg_cells[-1]]] * self.move_cost
        return self.state.energy - leg - back >= self.config.e_min

    def _charge_move(self) -> int:
        """An action that keeps the robot on (or returns it to) its station."""
        r, c = self.state.position
        for a, (dr, dc) in enumerate(ACTION_DELTAS):
            if not self.grid.is_free((r + dr, c + dc)):
                return a  # blocked bump: stay put and charge
        for a, (dr, dc) in enumerate(ACTION_DELTAS):
            if (r + dr, c + dc) in self.grid.stations:
                return a
        return -1

    def charge(self) -> None:
        """Top up at the current station until further charging gains nothing."""
        cfg = self.config
        while not self.done and self.state.position in self.grid.stations:
            before = self.state.energy
            if before >= cfg.e_max:
                return
            a = self._charge_move()
            if a >= 0:
                self._move(a)
            else:
                # step off to a neighbour and straight back
                home = self.state.position
                nxt = next(iter(sorted(self.grid.neighbors(home))))
                self.follow([home, nxt])
                if self.done:
                    return
                self.follow([nxt, home])
            if self.state.energy <= before:
                return

    def go_charge(self) -> None:
        i = self.pos_index
        path = self.table.path(i, int(self.table.nearest_station[i]))
        self.follow([self.table.cells[k] for k in path])
        self.charge()

    def travel(self, leg_cells: Sequence[Cell]) -> Optional[bool]:
        """Execute a leg under the guard.

        True when walked, False when the episode is over, None when the robot
        detoured to charge instead and the caller should re-plan.
        """
        if self.done:
            return False
        if self.leg_ok(leg_cells):
            self.follow(leg_cells)
            return True
        self.go_charge()
        if self.done:
            return False
        return None  # caller re-plans from the station

    def go_to(self, target: Cell) -> bool:
        """Shortest-path leg with one charging retry."""
        for _ in range(2):
            if self.done:
                return False
            path = [self.table.cells[k] for k in self.table.path(self.pos_index, self.table.index[target])]
            res = self.travel(path)
            if res is not None:
                return res
        self.dropped.append(target)
        return False

    def finish(self) -> None:
        """Return to the nearest station so a covered map can complete."""
        if self.done:
            return
        i = self.pos_index
        path = self.table.path(i, int(self.table.nearest_station[i]))
        self.follow([self.table.cells[k] for k in path])

    def result(self, **info) -> PlanResult:
        return PlanResult(self.actions, self.trace, self.tracker.stats(), dict(info))


# ---------------------------------------------------------------------------
# RRT


def _rrt_path(grid: GridMap, start: Cell, goal: Cell, free: np.ndarray, cfg: PlannerConfig, rng) -> Optional[List[Cell]]:
    """Grow a grid RRT from ``start`` until it touches ``goal``."""
    if start == goal:
        return [start]
    nodes = [start]
    coords = np.empty((cfg.max_nodes + 1, 2), dtype=np.int64)
    coords[0] = start
    parent: Dict[Cell, Optional[Cell]] = {start: None}
    for _ in range(cfg.max_nodes * 4):
        if len(nodes) > cfg.max_nodes:
            break
        if rng.random() < cfg.goal_bias:
            sample = goal
        else:
            sample = tuple(free[rng.integers(len(free))])
        d = np.abs(coords[: len(nodes)] - sample).sum(axis=1)
        near = nodes[int(d.argmin())]
        best, best_d = None, None
        for dr, dc in ACTION_DELTAS:
            cand = (near[0] + dr, near[1] + dc)
            if cand in parent or not grid.is_free(cand):
                continue
            cd = abs(cand[0] - sample[0]) + abs(cand[1] - sample[1])
            if best_d is None or cd < best_d:
                best, best_d = cand, cd
        if best is None:
            continue
        parent[best] = near
        coords[len(nodes)] = best
        nodes.append(best)
        if best == goal:
            path = [goal]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
    return None


def plan_rrt(grid: GridMap, config: PlannerConfig, env_config: EnvConfig = EnvConfig()) -> PlanResult:
    """Repeated RRT queries toward the nearest uncovered cell."""
    rng = np.random.default_rng(config.seed)
    ex = GuardedExecutor(grid, env_config, seed=config.seed)
    table = ex.table
    free = np.array(table.cells, dtype=np.int64)
    skipped = set()
    queries = 0
    while not ex.done:
        here = ex.pos_index
        order = np.argsort(table.dist[here], kind="stable")
        target = None
        for k in order:
            cell = table.cells[int(k)]
            if not ex.covered(cell) and cell not in skipped:
                target = cell
                break
        if target is None:
            break
        queries += 1
        path = _rrt_path(grid, ex.state.position, target, free, config, rng)
        if path is None:
            skipped.add(target)
            continue
        res = ex.travel(path)
        if res is None:
            # detoured to charge; try once more from the station
            path = _rrt_path(grid, ex.state.position, target, free, config, rng)
            res = ex.travel(path) if path is not None else False
            if res is None:
                res = False
        if res is False:
            skipped.add(target)
    ex.finish()
    return ex.result(queries=queries, skipped=len(skipped))


# ---------------------------------------------------------------------------
# ACO


def _aco_tour(table: PathTable, start: int, tau: np.ndarray, cfg: PlannerConfig, rng) -> Tuple[List[int], float]:
    n = len(table.cells)
    unvisited = np.ones(n, dtype=bool)
    unvisited[start] = False
    cur, tour, length = start, [start], 0.0
    heur = 1.0 / np.maximum(table.dist, 1).astype(float)
    while unvisited.any():
        cand = np.flatnonzero(unvisited)
        w = tau[cur, cand] ** cfg.pheromone_weight * heur[cur, cand] ** cfg.heuristic_weight
        nxt = int(cand[np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right").clip(max=len(cand) - 1)])
        for k in table.path(cur, nxt):
            unvisited[k] = False
        length += table.dist[cur, nxt]
        tour.append(nxt)
        cur = nxt
    length += table.to_station[cur]
    return tour, float(length)


def plan_aco(grid: GridMap, config: PlannerConfig, env_config: EnvConfig = EnvConfig()) -> PlanResult:
    """Ant colony over visiting orders; the shortest tour is executed under the guard."""
    rng = np.random.default_rng(config.seed)
    table = PathTable(grid)
    n = len(table.cells)
    start = table.index[grid.base_station]
    tau = np.ones((n, n))
    best_tour, best_len = [start], np.inf
    history = []
    if n > 1:
        for _ in range(config.iterations):
            tours = [_aco_tour(table, start, tau, config, rng) for _ in range(config.ants)]
            tau *= 1.0 - config.evaporation
            np.maximum(tau, config.pheromone_floor, out=tau)
            for tour, length in tours:
                # deposit proportional to cells covered per unit of travel
                deposit = n / max(length, 1.0)
                for a, b in zip(tour, tour[1:]):
                    tau[a, b] += deposit
                if length < best_len:
                    best_tour, best_len = tour, length
            history.append(best_len)
    # expand legs into the full first-visit order, so cells passed on the way
    # are still targeted when a charging detour changes the executed route
    order, seen = [], set()
    for a, b in zip(best_tour, best_tour[1:]):
        for k in table.path(a, b):
            if k not in seen:
                seen.add(k)
                order.append(k)
    ex = GuardedExecutor(grid, env_config, table, seed=config.seed)
    for k in order:
        if ex.done:
            break
        cell = table.cells[k]
        if not ex.covered(cell):
            ex.go_to(cell)
    ex.finish()
    return ex.result(best_length=best_len, history=history, pheromone_min=float(tau.min()))


# ---------------------------------------------------------------------------
# PSO


def decode_priorities(
    grid: GridMap, env_config: EnvConfig, priorities: np.ndarray, table: Optional[PathTable] = None, seed: int = 0
) -> GuardedExecutor:
    """Visit uncovered cells in decreasing priority order (ties: lower index first)."""
    table = table if table is not None else PathTable(grid)
    ex = GuardedExecutor(grid, env_config, table, seed=seed)
    for k in np.argsort(-np.asarray(priorities), kind="stable"):
        if ex.done:
            break
        cell = table.cells[int(k)]
        if not ex.covered(cell):
            ex.go_to(cell)
    ex.finish()
    return ex


def pso_fitness(stats: EpisodeStats, env_config: EnvConfig, penalty: float) -> float:
    return env_config.psi1 * stats.covered_cells - env_config.psi2 * stats.energy_consumed - penalty * stats.violation_steps


def plan_pso(grid: GridMap, config: PlannerConfig, env_config: EnvConfig = EnvConfig()) -> PlanResult:
    """Particle swarm over per-cell priority vectors."""
    rng = np.random.default_rng(config.seed)
    table = PathTable(grid)
    n = len(table.cells)
    S = config.swarm_size
    x = rng.random((S, n))
    v = rng.uniform(-0.1, 0.1, size=(S, n))

    def evaluate(p):
        ex = decode_priorities(grid, env_config, p, table, config.seed)
        return pso_fitness(ex.tracker.stats(), env_config, config.violation_penalty), ex

    fit = np.array([evaluate(p)[0] for p in x])
    pbest, pbest_fit = x.copy(), fit.copy()
    g = int(np.argmax(fit))
    gbest, gbest_fit = x[g].copy(), float(fit[g])
    history = [gbest_fit]
    for _ in range(config.iterations):
        r1, r2 = rng.random((S, n)), rng.random((S, n))
        v = config.inertia * v + config.cognitive * r1 * (pbest - x) + config.social * r2 * (gbest - x)
        x = x + v
        fit = np.array([evaluate(p)[0] for p in x])
        better = fit > pbest_fit
        pbest[better], pbest_fit[better] = x[better], fit[better]
        g = int(np.argmax(pbest_fit))
        if pbest_fit[g] > gbest_fit:
            gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])
        history.append(gbest_fit)
    _, ex = evaluate(gbest)
    return ex.result(best_fitness=gbest_fit, history=history)


_PLANNERS = {"rrt": plan_rrt, "aco": plan_aco, "pso": plan_pso}


def plan(grid: GridMap, config: PlannerConfig, env_config: EnvConfig = EnvConfig()) -> PlanResult:
    return _PLANNERS[config.algorithm](grid, config, env_config)


def evaluate_planner(
    grid: GridMap, config: PlannerConfig, runs: int, env_config: EnvConfig = EnvConfig()
) -> Tuple[Dict[str, Summary], List[EpisodeStats]]:
    """Seeded runs ``config.seed .. config.seed + runs - 1``; mean and sample std per metric."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    from dataclasses import replace

    stats = [plan(grid, replace(config, seed=config.seed + i), env_config).stats for i in range(runs)]
    return aggregate(stats), stats
