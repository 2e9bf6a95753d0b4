"""Brute-force verifiers used by the test suite.

Nothing here calls into the environment, the planners or the autodiff
engine; only the plain data types (``GridMap``, ``EnvConfig``) are shared.
Dynamics are re-derived from the rules directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .gridworld import EnvConfig, GridMap

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class OracleSizeError(ValueError):
    pass


def finite_difference(
    f: Callable[[], float], array: np.ndarray, epsilon: float = 1e-5, indices: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Central differences of ``f`` with respect to entries of ``array``.

    ``array`` is perturbed in place (and restored), so ``f`` must read it.
    ``indices`` are flat positions; all entries when omitted.
    """
    flat = array.reshape(-1)
    if not np.shares_memory(flat, array):
        raise ValueError("array must be contiguous so it can be perturbed in place")
    if indices is None:
        indices = range(flat.size)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = f()
        flat[i] = orig - epsilon
        down = f()
        flat[i] = orig
        out[k] = (up - down) / (2.0 * epsilon)
    return out


def _free(grid: GridMap, cell) -> bool:
    r, c = cell
    return 0 <= r < grid.size and 0 <= c < grid.size and (r, c) not in grid.obstacles


def reachability_bruteforce(grid: GridMap, pos, energy: float, eta: float = 1.0, max_size: int = 8) -> bool:
    """Is some station reachable from ``pos`` along unobstructed cells within ``energy``?

    Depth-first enumeration of simple paths. A branch is cut when the same
    cell was already entered with at least as much energy left, since any
    continuation from there was already explored.
    """
    if grid.size > max_size:
        raise OracleSizeError(f"reachability oracle limited to {max_size}x{max_size}")
    pos = tuple(pos)
    if not _free(grid, pos):
        return False
    step_cost = eta * grid.cell_length
    best_left = {}

    def dfs(cell, left, on_path) -> bool:
        if cell in grid.stations:
            return True
        if best_left.get(cell, -1.0) >= left:
            return False
        best_left[cell] = left
        if left < step_cost:
            return False
        for dr, dc in _MOVES:
            nxt = (cell[0] + dr, cell[1] + dc)
            if _free(grid, nxt) and nxt not in on_path:
                on_path.add(nxt)
                found = dfs(nxt, left - step_cost, on_path)
                on_path.discard(nxt)
                if found:
                    return True
        return False

    return dfs(pos, float(energy), {pos})


@dataclass(frozen=True)
class OracleResult:
    """Minimum-energy full-coverage tour ending on a station.

    ``energy`` is ``None`` when no such tour exists (INFEASIBLE).
    """

    energy: Optional[float]
    actions: Tuple[int, ...]

    @property
    def feasible(self) -> bool:
        return self.energy is not None


def exhaustive_coverage(grid: GridMap, config: EnvConfig = EnvConfig(), max_cells: int = 16) -> OracleResult:
    """Breadth-first search over (position, covered-set, energy) states.

    Every step costs the same energy, so the first layer that reaches a
    complete state is optimal. States are pruned by dominance: the same
    (position, covered-set) seen at an earlier or equal layer with at least
    as much energy. Energy is tracked in integer units, which requires
    integral ``eta_m * cell_length``, ``charge_rate`` and ``e_max``.
    """
    n = grid.size
    if n * n > max_cells:
        raise OracleSizeError(f"exhaustive search limited to {max_cells} cells")
    move_cost = config.eta_m * grid.cell_length
    for v in (move_cost, config.charge_rate, config.e_max):
        if float(v) != int(v):
            raise ValueError("exhaustive search needs integral energy quantities")
    move_cost, charge, e_max = int(move_cost), int(config.charge_rate), int(config.e_max)
    horizon = config.max_steps if config.max_steps is not None else 4 * n * n

    index = {(r, c): r * n + c for r in range(n) for c in range(n)}
    # coverage target: flood fill from base
    target_cells = {grid.base_station}
    frontier = [grid.base_station]
    while frontier:
        cur = frontier.pop()
        for dr, dc in _MOVES:
            nxt = (cur[0] + dr, cur[1] + dc)
            if _free(grid, nxt) and nxt not in target_cells:
                target_cells.add(nxt)
                frontier.append(nxt)
    full = 0
    for cell in target_cells:
        full |= 1 << index[cell]

    start = (grid.base_station, 1 << index[grid.base_station], e_max)

    def complete(pos, mask):
        return mask == full and pos in grid.stations

    if complete(start[0], start[1]):
        return OracleResult(0.0, ())

    best = {(start[0], start[1]): e_max}
    parent = {start: None}
    layer = [start]
    for depth in range(1, horizon + 1):
        nxt_layer = []
        for state in layer:
            pos, mask, energy = state
            for a, (dr, dc) in enumerate(_MOVES):
                tgt = (pos[0] + dr, pos[1] + dc)
                new_pos = tgt if _free(grid, tgt) else pos
                e = energy - move_cost
                if new_pos in grid.stations:
                    e = min(e + charge, e_max)
                e = max(e, 0)
                new_mask = mask | (1 << index[new_pos])
                new_state = (new_pos, new_mask, e)
                if complete(new_pos, new_mask):
                    parent[new_state] = (state, a)
                    actions = []
                    s = new_state
                    while parent[s] is not None:
                        s, act = parent[s]
                        actions.append(act)
                    return OracleResult(float(depth * move_cost), tuple(reversed(actions)))
                if e <= 0:
                    continue
                key = (new_pos, new_mask)
                if best.get(key, -1) >= e:
                    continue
                best[key] = e
                parent[new_state] = (state, a)
                nxt_layer.append(new_state)
        if not nxt_layer:
            break
        layer = nxt_layer
    return OracleResult(None, ())
