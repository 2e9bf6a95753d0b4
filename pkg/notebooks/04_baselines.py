"""
Three classic planners with a shared battery guard
==================================================

RRT, ant colony and particle swarm each decide *where to go next*. The
same guard then decides *whether it is safe to go*: before every leg it
checks that the battery still covers the leg plus the way back to a pad,
keeping ``e_min`` in reserve, and detours to charge otherwise.
"""

# %%
import time

from coverpath.baselines import PlannerConfig, evaluate_planner, plan
from coverpath.gridworld import EnvConfig
from coverpath.mapgen import builtin_map

grid = builtin_map(2)
env = EnvConfig()

# %%
for algo in ("rrt", "aco", "pso"):
    t0 = time.perf_counter()
    res = plan(grid, PlannerConfig(algo, iterations=10, ants=6, swarm_size=6), env)
    s = res.stats
    print(
        f"{algo}: {100 * s.covered_cells / s.reachable_free_cells:5.1f}% covered, "
        f"{s.steps} steps, {s.energy_consumed:.0f} energy, {s.violation_steps} low-battery steps, "
        f"{time.perf_counter() - t0:.1f}s"
    )

# %%
# The guard at work: a tight battery forces many trips back to a pad.
tight = EnvConfig(e_max=30, e_min=5)
res = plan(grid, PlannerConfig("rrt"), tight)
visits = sum(1 for st in res.trace if st.position in grid.stations)
print(f"tight battery: {res.stats.covered_cells} cells, {visits} steps spent on pads")

# %%
# Twenty seeded runs, summarised as mean and sample standard deviation.
summary, _ = evaluate_planner(grid, PlannerConfig("rrt"), 20, env)
for key in ("coverage_pct", "violations", "energy_efficiency"):
    print(f"{key:18s} {summary[key]}")
