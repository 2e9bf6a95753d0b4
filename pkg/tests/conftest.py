import numpy as np
import pytest

from coverpath.gridworld import EnvConfig, GridMap


def open_map(n, stations=((0, 0),), obstacles=(), base=None):
    stations = frozenset(stations)
    return GridMap(n, frozenset(obstacles), stations, base or sorted(stations)[0])


def random_map(rng, n, density=0.2, n_stations=2):
    """Random map, possibly with disconnected pockets; base is the first station."""
    cells = [(r, c) for r in range(n) for c in range(n)]
    order = rng.permutation(len(cells))
    stations = [cells[i] for i in order[:n_stations]]
    k = int(density * n * n)
    obstacles = [cells[i] for i in order[n_stations:n_stations + k]]
    return GridMap(n, frozenset(obstacles), frozenset(stations), stations[0])


@pytest.fixture
def worked_example():
    """5x5 map of the hand-worked example, in (row, col) coordinates.

    The example quotes (x, y) pairs with x growing to the right, so each pair
    is swapped here: obstacles (1,2) (3,3) (4,1) become (2,1) (3,3) (1,4).
    """
    grid = GridMap(5, frozenset({(2, 1), (3, 3), (1, 4)}), frozenset({(0, 0)}), (0, 0))
    return grid, EnvConfig(e_max=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def playable_map(rng, n, density=0.2, n_stations=2):
    """Like random_map but every station is reachable from the base."""
    while True:
        grid = random_map(rng, n, density, n_stations)
        if all(s in grid.reachable_cells() for s in grid.stations):
            return grid


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
