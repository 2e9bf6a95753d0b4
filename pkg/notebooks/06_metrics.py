"""
Scoring episodes
================

Coverage, low-battery steps, energy efficiency and return, computed from
per-episode statistics and then averaged over runs.
"""

# %%
from coverpath.gridworld import EnvConfig, RewardComponents
from coverpath.metrics import (
    EpisodeStats,
    aggregate,
    coverage_rate,
    energy_efficiency,
    total_reward,
    violations,
)

run = EpisodeStats(covered_cells=180, reachable_free_cells=200, obstacle_cells=25, total_cells=225, energy_consumed=200)
print("coverage", coverage_rate(run), "efficiency", energy_efficiency(run))
print("steps below e_min in (15, 12, 9, 8):", violations([15, 12, 9, 8], e_min=10))
print("return of one worked step:", total_reward([RewardComponents(1.0, 1.0, 0.5)], EnvConfig()))

# %%
# Coverage has two denominators. They differ when some free cell is sealed
# off; "reachable" is the one that can actually hit 100%.
sealed = EpisodeStats(covered_cells=6, reachable_free_cells=6, obstacle_cells=2, total_cells=9)
print("reachable", coverage_rate(sealed), "free", round(coverage_rate(sealed, "free"), 2))

# %%
runs = [
    EpisodeStats(covered_cells=80, reachable_free_cells=100, total_cells=100, energy_consumed=120),
    EpisodeStats(covered_cells=100, reachable_free_cells=100, total_cells=100, energy_consumed=140, violation_steps=3),
]
for key, summary in aggregate(runs).items():
    print(f"{key:20s} {summary}")
