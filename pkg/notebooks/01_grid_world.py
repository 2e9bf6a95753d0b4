"""
The energy-aware grid world
===========================

A robot sweeps a 5x5 field with three rocks and one charging pad in the
corner. Every move costs one unit of battery, landing on a pad tops it up,
and each step pays a reward built from three parts: a new cell (+1) or a
revisit (-1), the energy spent, and whether a station is still reachable.
"""

# %%
import numpy as np

from coverpath.gridworld import (
    Action,
    EnvConfig,
    EnvState,
    GridMap,
    format_map,
    is_safe_cell,
    min_return_cost,
    reset,
    state_tensor,
    step,
)

grid = GridMap(5, frozenset({(2, 1), (3, 3), (1, 4)}), frozenset({(0, 0)}), (0, 0))
config = EnvConfig(e_max=20)
print(format_map(grid))

# %%
# Put the robot mid-sweep: four cells done, 18 units left, standing at (1, 2).
covered = np.zeros((5, 5), dtype=bool)
for cell in [(0, 0), (0, 1), (1, 1), (1, 2)]:
    covered[cell] = True
state = EnvState((1, 2), 18.0, covered, 3)

out = step(grid, config, state, Action.RIGHT)
print("moved to", out.state.position, "battery", out.state.energy)
print("components", out.reward_components, "reward", out.reward)

# %%
# The safety part looks one step ahead: can the robot still get home?
pos = out.state.position
print("cost home from", pos, "=", min_return_cost(grid, pos, config))
for battery in (2, 3, 4):
    print(f"  safe with {battery} units:", is_safe_cell(grid, pos, battery, config))

# %%
# What the networks see: four binary planes of size N x N.
x = state_tensor(grid, out.state)
for name, plane in zip(["obstacles", "stations", "position", "coverage"], x):
    print(name)
    print(plane.astype(int))

# %%
# A random walk from a fresh reset, until the battery runs out or the
# horizon is hit. Charging only happens on the pad itself.
rng = np.random.default_rng(0)
s = reset(grid, config)
total = 0.0
while not s.done:
    o = step(grid, config, s, int(rng.integers(4)))
    total += o.reward
    s = o.state
print(f"random walk: {int(s.covered.sum())} cells, {s.t} steps, {s.done_reason.value}, return {total:.1f}")
