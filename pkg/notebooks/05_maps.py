"""
Generating fields and placing charging pads
===========================================

Maps are drawn with a fixed number of obstacle cells and redrawn until every
free cell is reachable. Pads are then placed by one of four layouts.
"""

# %%
import numpy as np

from coverpath.gridworld import format_map
from coverpath.mapgen import Layout, MapSpec, builtin_map, generate, min_pairwise_distance

for layout in Layout:
    grid = generate(MapSpec(size=12, density=0.15, stations=4, layout=layout, seed=5))
    print(layout.value, sorted(grid.stations))

# %%
# Strategic placement is greedy farthest-first over walking distance, so
# pads spread out. Compare the closest pair against random placement.
for layout in (Layout.STRATEGIC, Layout.RANDOM):
    d = [min_pairwise_distance(generate(MapSpec(15, 0.0, 4, layout, s)).stations) for s in range(50)]
    print(f"{layout.value:10s} closest pads, mean over 50 maps: {np.mean(d):.1f}")

# %%
# The three shipped 15x15 fields.
for k in (1, 2, 3):
    grid = builtin_map(k)
    print(f"map {k}: {len(grid.obstacles)} obstacles, {len(grid.stations)} pads")
    print(format_map(grid))
