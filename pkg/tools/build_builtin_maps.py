"""Regenerate the frozen builtin maps in src/coverpath/data.

The shipped files are the fixtures; this script only documents how they were
made. Re-running it must reproduce them byte for byte.
"""

from pathlib import Path

import numpy as np

from coverpath.gridworld import GridMap, format_map
from coverpath.mapgen import _connected, place_stations

N = 15
OUT = Path(__file__).resolve().parents[1] / "src" / "coverpath" / "data"


def finish(blocked, stations, meta):
    obstacles = frozenset(map(tuple, np.argwhere(blocked).tolist()))
    assert _connected(N, blocked)
    return GridMap(N, obstacles, frozenset(stations), stations[0], metadata=meta)


def map1(rng):
    """~10% scattered single-cell obstacles, four evenly spread stations."""
    stations = [(3, 3), (3, 11), (11, 3), (11, 11)]
    while True:
        blocked = np.zeros((N, N), dtype=bool)
        pool = [i for i in range(N * N) if divmod(i, N) not in stations]
        blocked.flat[rng.choice(pool, size=22, replace=False)] = True
        # keep obstacles isolated so the map reads as "scattered"
        rows, cols = np.nonzero(blocked)
        lonely = all(
            not blocked[r + dr, c + dc]
            for r, c in zip(rows, cols)
            for dr, dc in ((0, 1), (1, 0))
            if r + dr < N and c + dc < N
        )
        if lonely and _connected(N, blocked):
            return finish(blocked, stations, {"name": "map1", "layout": "even"})


def map2(rng):
    """Three rectangular obstacle clusters (~18%), five strategic stations."""
    blocked = np.zeros((N, N), dtype=bool)
    blocked[2:6, 5:9] = True
    blocked[8:11, 1:5] = True
    blocked[9:13, 9:12] = True
    probe = GridMap(N, frozenset(map(tuple, np.argwhere(blocked).tolist())), frozenset({(0, 0)}), (0, 0))
    stations = place_stations(probe, "strategic", 5, rng)
    return finish(blocked, stations, {"name": "map2", "layout": "strategic"})


def map3(rng):
    """Irregular random-walk strands (~20%), six strategic stations."""
    moves = ((0, 1), (1, 0), (0, -1), (-1, 0))
    while True:
        blocked = np.zeros((N, N), dtype=bool)
        for _ in range(200):
            if blocked.sum() >= 45:
                break
            r, c = (int(v) for v in rng.integers(1, N - 1, size=2))
            heading = int(rng.integers(4))
            for _ in range(int(rng.integers(5, 10))):
                if blocked.sum() >= 45:
                    break
                blocked[r, c] = True
                if rng.random() < 0.35:
                    heading = (heading + (1 if rng.random() < 0.5 else 3)) % 4
                r = min(max(r + moves[heading][0], 0), N - 1)
                c = min(max(c + moves[heading][1], 0), N - 1)
        if blocked.sum() == 45 and _connected(N, blocked):
            break
    free = tuple(np.argwhere(~blocked)[0].tolist())
    probe = GridMap(N, frozenset(map(tuple, np.argwhere(blocked).tolist())), frozenset({free}), free)
    stations = place_stations(probe, "strategic", 6, rng)
    return finish(blocked, stations, {"name": "map3", "layout": "strategic"})


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for i, build in enumerate((map1, map2, map3), start=1):
        grid = build(np.random.default_rng(2024 + i))
        (OUT / f"map{i}.map").write_text(format_map(grid))
        print(f"map{i}: {len(grid.obstacles)} obstacles, {len(grid.stations)} stations")
        print(format_map(grid))


if __name__ == "__main__":
    main()
