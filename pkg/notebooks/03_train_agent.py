"""
Training the soft actor-critic agent
====================================

A short run on a 6x6 field. The agent is small (4 conv channels, one
attention head, 32 LSTM units) so a few hundred episodes take minutes on a
laptop core. The learning curve and a greedy rollout are printed at the end.

Two settings matter more than the rest at this size: weights drawn with
std 0.1 rather than 0.01, and large batches updated every fourth step.
With tiny initial weights and batches of 16 the trunk barely learns which
neighbouring cells are still uncovered.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from coverpath.gridworld import EnvConfig, GridWorld, format_map
from coverpath.mapgen import MapSpec, generate
from coverpath.nn.network import TrunkConfig
from coverpath.report import moving_average
from coverpath.sac import GREEDY, SacAgent, SacConfig, run_episode, train

grid = generate(MapSpec(size=6, density=0.1, stations=2, seed=3))
print(format_map(grid))
env = GridWorld(grid, EnvConfig(e_max=60))

agent = SacAgent(
    TrunkConfig(grid_size=6, channels=4, heads=1, hidden=32, init_std=0.1),
    SacConfig(
        batch_size=64,
        window=1,
        update_every=4,
        learning_starts=500,
        lr_actor=1e-3,
        target_entropy=0.3,
        target_mode="expected",
    ),
    seed=0,
)

# %%
def progress(rec, agent):
    if rec.episode % 50 == 0:
        print(f"episode {rec.episode:4d}  coverage {rec.coverage_pct:5.1f}%  reward {rec.reward:7.1f}  alpha {rec.alpha:.3f}")


records = train(env, agent, 300, [progress])

# %%
cov = moving_average([r.coverage_pct for r in records], 50)
print("smoothed coverage, every 50th episode:", np.round(cov[::50], 1))

stats, trace = run_episode(env, agent, GREEDY, record_trace=True)
print(f"greedy: {stats.covered_cells}/{stats.reachable_free_cells} cells in {stats.steps} steps, {stats.done_reason}")
ckpt = Path(tempfile.mkdtemp()) / "agent.npz"
agent.save(ckpt, episode=len(records))
print("checkpoint written to", ckpt)
