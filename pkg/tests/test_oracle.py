import numpy as np
import pytest

from coverpath.gridworld import DoneReason, EnvConfig, GridMap, reset, step
from coverpath.oracle import OracleSizeError, exhaustive_coverage, finite_difference, reachability_bruteforce

from conftest import open_map, playable_map


def replay(grid, config, actions):
    state = reset(grid, config)
    used = 0.0
    for a in actions:
        out = step(grid, config, state, a)
        used += out.energy_consumed
        state = out.state
    return state, used


def test_two_by_two_optimum_is_four():
    grid, cfg = open_map(2), EnvConfig(e_max=100)
    res = exhaustive_coverage(grid, cfg)
    assert res.feasible and res.energy == 4.0 and len(res.actions) == 4
    state, used = replay(grid, cfg, res.actions)
    assert state.done_reason is DoneReason.COMPLETE and used == res.energy


def test_single_cell_needs_nothing():
    res = exhaustive_coverage(open_map(1), EnvConfig())
    assert res.energy == 0.0 and res.actions == ()


def test_infeasible_when_battery_too_small():
    # a 1x4 corridor worth of cells: the far end is 3 moves away and 3 back
    grid = open_map(4, obstacles=[(r, c) for r in range(1, 4) for c in range(4)])
    assert not exhaustive_coverage(grid, EnvConfig(e_max=5, e_min=1)).feasible
    res = exhaustive_coverage(grid, EnvConfig(e_max=7, e_min=1))
    assert res.energy == 6.0


def test_charging_makes_longer_tours_possible():
    # station at both ends of the corridor: the robot can top up halfway
    grid = open_map(4, stations=[(0, 0), (0, 3)], obstacles=[(r, c) for r in range(1, 4) for c in range(4)])
    res = exhaustive_coverage(grid, EnvConfig(e_max=4, e_min=1))
    assert res.energy == 3.0


def test_size_cap_and_integrality():
    with pytest.raises(OracleSizeError):
        exhaustive_coverage(open_map(5), EnvConfig())
    with pytest.raises(ValueError):
        exhaustive_coverage(open_map(2), EnvConfig(eta_m=0.5))


@pytest.mark.parametrize("seed", range(12))
def test_witness_replays_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    grid = playable_map(rng, int(rng.integers(2, 5)), 0.2, int(rng.integers(1, 3)))
    cfg = EnvConfig(e_max=float(rng.integers(6, 30)), e_min=2)
    res = exhaustive_coverage(grid, cfg)
    if not res.feasible:
        return
    state, used = replay(grid, cfg, res.actions)
    assert state.done_reason is DoneReason.COMPLETE
    assert used == res.energy
    # the free cells can never be covered with fewer moves than cells to enter
    assert res.energy >= len(grid.reachable_cells()) - 1


def test_reachability_edge_cases():
    grid = open_map(4, stations=[(0, 0)], obstacles=[(1, 1)])
    assert reachability_bruteforce(grid, (0, 0), 0)
    assert not reachability_bruteforce(grid, (0, 1), 0)
    assert reachability_bruteforce(grid, (0, 1), 1)
    assert reachability_bruteforce(grid, (2, 2), 4) and not reachability_bruteforce(grid, (2, 2), 3.9)
    assert not reachability_bruteforce(grid, (1, 1), 100)  # obstacle
    walled = GridMap(3, frozenset({(0, 1), (1, 0), (1, 1)}), frozenset({(0, 0)}), (0, 0))
    assert not reachability_bruteforce(walled, (2, 2), 100)
    with pytest.raises(OracleSizeError):
        reachability_bruteforce(open_map(9), (0, 0), 1)


def test_finite_difference_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    g = finite_difference(lambda: float(np.sum(x ** 2)), x)
    np.testing.assert_allclose(g, 2 * np.array([1.0, -2.0, 3.0]), rtol=0, atol=1e-9)
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])
    g = finite_difference(lambda: float(np.sum(x ** 2)), x, indices=[2])
    assert g.shape == (1,) and g[0] == pytest.approx(6.0)
