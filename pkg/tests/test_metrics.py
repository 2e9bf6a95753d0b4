import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coverpath.gridworld import Action, ConfigurationError, EnvConfig, EnvState, RewardComponents, reset, step
from coverpath.metrics import (
    EpisodeStats,
    EpisodeTracker,
    MetricError,
    aggregate,
    coverage_rate,
    energy_efficiency,
    failed_episodes,
    stats_from_trace,
    summarize,
    total_reward,
    total_reward_aligned,
    violations,
)

from conftest import open_map, playable_map


def test_coverage_rate_examples():
    s = EpisodeStats(covered_cells=180, reachable_free_cells=200, obstacle_cells=25, total_cells=225)
    assert coverage_rate(s) == 90.0
    assert coverage_rate(s, "free") == 90.0
    full = EpisodeStats(covered_cells=200, reachable_free_cells=200, obstacle_cells=25, total_cells=225)
    assert coverage_rate(full) == 100.0
    fresh = EpisodeStats(covered_cells=1, reachable_free_cells=22, obstacle_cells=3, total_cells=25)
    assert coverage_rate(fresh, "free") == pytest.approx(4.545454, abs=1e-5)
    assert round(coverage_rate(fresh, "free"), 2) == 4.55


def test_coverage_denominators_differ_with_pockets():
    # a free cell walled off in a corner: reachable denominator 6, free-cell denominator 7
    grid = open_map(3, obstacles=[(1, 2), (2, 1)])
    s = EpisodeStats(covered_cells=6, reachable_free_cells=len(grid.reachable_cells()), obstacle_cells=2, total_cells=9)
    assert coverage_rate(s) == 100.0
    assert coverage_rate(s, "free") == pytest.approx(600 / 7)
    with pytest.raises(ValueError):
        coverage_rate(s, "mean")


def test_coverage_needs_free_cells():
    with pytest.raises(ConfigurationError):
        coverage_rate(EpisodeStats(covered_cells=0, reachable_free_cells=0, obstacle_cells=4, total_cells=4), "free")


def test_stats_invariants():
    with pytest.raises(MetricError):
        EpisodeStats(covered_cells=5, reachable_free_cells=4)
    with pytest.raises(MetricError):
        EpisodeStats(steps=-1)


def test_violation_examples():
    assert violations([15, 12, 9, 8], 10) == 2
    assert violations([15, 12, 11, 10], 10) == 0
    assert violations([3, 0, 1], 0) == 0
    with pytest.raises(MetricError):
        violations([], 10)


def test_failed_episodes_counts_depletion_only():
    runs = [EpisodeStats(done_reason="energy_depleted"), EpisodeStats(done_reason="truncated"), EpisodeStats(done_reason="complete")]
    assert failed_episodes(runs) == 1


def test_energy_efficiency_examples():
    assert energy_efficiency(EpisodeStats(covered_cells=180, reachable_free_cells=200, energy_consumed=200)) == 90.0
    assert energy_efficiency(EpisodeStats(covered_cells=1, energy_consumed=1)) == 100.0
    assert energy_efficiency(EpisodeStats(energy_consumed=0)) is None


def test_revisits_lower_efficiency():
    effs = [energy_efficiency(EpisodeStats(covered_cells=50, reachable_free_cells=60, energy_consumed=e)) for e in (50, 60, 80, 120)]
    assert all(a > b for a, b in zip(effs, effs[1:]))


def test_total_reward_examples():
    worked = RewardComponents(1.0, 1.0, 0.5)
    assert total_reward([worked], (1.0, 0.5, 0.7)) == 0.85
    assert total_reward([worked], EnvConfig()) == 0.85
    assert total_reward([], (1.0, 0.5, 0.7)) == 0
    assert total_reward([worked, worked], (1.0, 0.5, 0.7)) == 2 * 0.85
    with pytest.raises(MetricError):
        total_reward_aligned([1.0], [1.0, 1.0], [0.5], (1, 0.5, 0.7))


def test_aggregate_examples():
    assert summarize([90, 90, 90]).mean == 90 and summarize([90, 90, 90]).std == 0
    s = summarize([80, 100])
    assert abs(s.mean - 90) < 1e-9 and abs(s.std - 14.142135623730951) < 1e-9
    s = summarize([80, 90])
    assert abs(s.mean - 85) < 1e-9 and abs(s.std - 7.0710678118654755) < 1e-9
    assert summarize([42.0]).std == 0.0
    assert str(summarize([80, 100])) == "90.00 ± 14.14"
    with pytest.raises(MetricError):
        summarize([])


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30), st.randoms())
def test_summarize_is_order_invariant_and_matches_numpy(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert summarize(values) == summarize(shuffled)
    s = summarize(values)
    assert s.mean == pytest.approx(np.mean(values), abs=1e-6)
    if len(values) > 1:
        assert s.std == pytest.approx(np.std(values, ddof=1), abs=1e-6)


def test_aggregate_per_metric():
    runs = [
        EpisodeStats(covered_cells=80, reachable_free_cells=100, total_cells=100, energy_consumed=100, violation_steps=2),
        EpisodeStats(covered_cells=100, reachable_free_cells=100, total_cells=100, energy_consumed=0, done_reason="energy_depleted"),
    ]
    out = aggregate(runs)
    assert out["coverage_pct"].mean == 90 and abs(out["coverage_pct"].std - 14.142135623730951) < 1e-9
    assert out["violations"].mean == 1 and out["failed"].mean == 0.5
    assert out["energy_efficiency"].n == 1  # the zero-energy run has no efficiency
    assert aggregate(list(reversed(runs))) == out
    with pytest.raises(MetricError):
        aggregate([])


def random_episode(grid, config, seed, max_steps=200):
    rng = random.Random(seed)
    state = reset(grid, config)
    states, outcomes = [state], []
    tracker = EpisodeTracker.for_env(grid, config)
    while not state.done and len(outcomes) < max_steps:
        out = step(grid, config, state, rng.randrange(4))
        tracker.record(out)
        state = out.state
        states.append(state)
        outcomes.append(out)
    return states, outcomes, tracker


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_recomputed_stats_equal_tracker(seed):
    rng = np.random.default_rng(seed)
    grid = playable_map(rng, int(rng.integers(3, 7)), 0.15, 2)
    config = EnvConfig(e_max=float(rng.integers(5, 40)), e_min=3)
    states, outcomes, tracker = random_episode(grid, config, seed)
    assert stats_from_trace(grid, config, states, outcomes) == tracker.stats()
    # coverage is monotone along the episode
    counts = [int(s.covered.sum()) for s in states]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    # the weighted component sums give back the emitted reward
    comps = tracker.components
    rebuilt = (
        config.psi1 * sum(c.coverage for c in comps)
        - config.psi2 * sum(c.energy for c in comps)
        + config.psi3 * sum(c.safety for c in comps)
    )
    assert rebuilt == pytest.approx(sum(o.reward for o in outcomes), abs=1e-12)
    assert total_reward(comps, config) == sum(o.reward for o in outcomes)
