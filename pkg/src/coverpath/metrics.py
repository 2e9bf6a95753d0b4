"""Episode statistics and the evaluation metrics: reward, coverage, violations, energy efficiency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .gridworld import ConfigurationError, DoneReason, EnvConfig, RewardComponents, reward_from_components


class MetricError(ValueError):
    pass


@dataclass
class EpisodeStats:
    total_reward: float = 0.0
    covered_cells: int = 1
    reachable_free_cells: int = 1
    obstacle_cells: int = 0
    total_cells: int = 1
    energy_consumed: float = 0.0
    violation_steps: int = 0
    steps: int = 0
    completed: bool = False
    done_reason: str = DoneReason.NONE.value

    def __post_init__(self):
        if self.covered_cells > self.reachable_free_cells:
            raise MetricError("covered_cells exceeds reachable_free_cells")
        if min(self.covered_cells, self.reachable_free_cells, self.obstacle_cells, self.violation_steps, self.steps) < 0:
            raise MetricError("counts must be non-negative")

    @property
    def failed(self) -> bool:
        return self.done_reason == DoneReason.ENERGY_DEPLETED.value


def coverage_rate(stats: EpisodeStats, denominator: str = "reachable") -> float:
    """Percentage of covered cells.

    ``denominator="reachable"`` divides by free cells reachable from the base;
    ``"free"`` divides by N^2 - |O|. The two agree on connected maps.
    """
    if denominator == "reachable":
        denom = stats.reachable_free_cells
    elif denominator == "free":
        denom = stats.total_cells - stats.obstacle_cells
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    if denom <= 0:
        raise ConfigurationError("map has no free cells")
    return 100.0 * stats.covered_cells / denom


def violations(energy_trace: Sequence[float], e_min: float) -> int:
    """Number of timesteps with remaining energy strictly below ``e_min``."""
    if len(energy_trace) == 0:
        raise MetricError("energy trace is empty")
    return int(np.count_nonzero(np.asarray(energy_trace, dtype=float) < e_min))


def failed_episodes(runs: Iterable[EpisodeStats]) -> int:
    return sum(1 for r in runs if r.failed)


def energy_efficiency(stats: EpisodeStats) -> Optional[float]:
    """Covered cells per unit of consumed energy, x100. None when nothing was consumed."""
    if stats.energy_consumed <= 0:
        return None
    return 100.0 * stats.covered_cells / stats.energy_consumed


def total_reward(components: Sequence[RewardComponents], weights) -> float:
    """Sum of per-step rewards rebuilt from their (coverage, energy, safety) parts.

    ``weights`` is an EnvConfig or a (psi1, psi2, psi3) triple.
    """
    if isinstance(weights, EnvConfig):
        cfg = weights
    else:
        p1, p2, p3 = weights
        cfg = EnvConfig(psi1=p1, psi2=p2, psi3=p3)
    total = 0.0
    for comp in components:
        total += reward_from_components(comp, cfg)
    return total


def total_reward_aligned(coverage: Sequence[float], energy: Sequence[float], safety: Sequence[float], weights) -> float:
    if not (len(coverage) == len(energy) == len(safety)):
        raise MetricError("component traces have different lengths")
    return total_reward([RewardComponents(c, e, s) for c, e, s in zip(coverage, energy, safety)], weights)


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    n: int

    def __str__(self):
        return f"{self.mean:.2f} ± {self.std:.2f}"


def summarize(values: Sequence[float]) -> Summary:
    """Mean and sample standard deviation (n-1 denominator; 0 for a single value)."""
    vals = [float(v) for v in values]
    if not vals:
        raise MetricError("nothing to aggregate")
    vals.sort()  # fixed summation order regardless of input order
    n = len(vals)
    mean = math.fsum(vals) / n
    if n == 1:
        return Summary(mean, 0.0, 1)
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return Summary(mean, math.sqrt(var), n)


def aggregate(runs: Sequence[EpisodeStats]) -> Dict[str, Summary]:
    """Per-metric mean ± sample std across runs."""
    if not runs:
        raise MetricError("aggregate needs at least one run")
    effs = [energy_efficiency(r) for r in runs]
    out = {
        "coverage_pct": summarize([coverage_rate(r) for r in runs]),
        "coverage_pct_free": summarize([coverage_rate(r, "free") for r in runs]),
        "violations": summarize([r.violation_steps for r in runs]),
        "failed": summarize([1.0 if r.failed else 0.0 for r in runs]),
        "energy_consumed": summarize([r.energy_consumed for r in runs]),
        "total_reward": summarize([r.total_reward for r in runs]),
        "steps": summarize([r.steps for r in runs]),
    }
    valid = [e for e in effs if e is not None]
    if valid:
        out["energy_efficiency"] = summarize(valid)
    return out


@dataclass
class EpisodeTracker:
    """Incrementally maintained EpisodeStats plus the raw traces behind them."""

    e_min: float
    reachable_free_cells: int
    obstacle_cells: int
    total_cells: int
    energies: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    components: List[RewardComponents] = field(default_factory=list)
    covered: int = 1
    consumed: float = 0.0
    violation_steps: int = 0
    done_reason: str = DoneReason.NONE.value

    @classmethod
    def for_env(cls, grid, config: EnvConfig, initial_covered: int = 1) -> "EpisodeTracker":
        return cls(
            e_min=config.e_min,
            reachable_free_cells=len(grid.reachable_cells()),
            obstacle_cells=len(grid.obstacles),
            total_cells=grid.size * grid.size,
            covered=initial_covered,
        )

    def record(self, outcome) -> None:
        self.energies.append(outcome.state.energy)
        self.rewards.append(outcome.reward)
        self.components.append(outcome.reward_components)
        self.consumed += outcome.energy_consumed
        if outcome.new_cell:
            self.covered += 1
        if outcome.state.energy < self.e_min:
            self.violation_steps += 1
        self.done_reason = outcome.done_reason.value

    def stats(self) -> EpisodeStats:
        return EpisodeStats(
            total_reward=float(sum(self.rewards)),
            covered_cells=self.covered,
            reachable_free_cells=self.reachable_free_cells,
            obstacle_cells=self.obstacle_cells,
            total_cells=self.total_cells,
            energy_consumed=self.consumed,
            violation_steps=self.violation_steps,
            steps=len(self.rewards),
            completed=self.done_reason == DoneReason.COMPLETE.value,
            done_reason=self.done_reason,
        )


def stats_from_trace(grid, config: EnvConfig, states, outcomes) -> EpisodeStats:
    """Recompute EpisodeStats from scratch given the states and step outcomes of an episode."""
    final = states[-1]
    rewards = [o.reward for o in outcomes]
    energies = [o.state.energy for o in outcomes]
    return EpisodeStats(
        total_reward=float(sum(rewards)),
        covered_cells=int(final.covered.sum()),
        reachable_free_cells=len(grid.reachable_cells()),
        obstacle_cells=len(grid.obstacles),
        total_cells=grid.size * grid.size,
        energy_consumed=float(sum(o.energy_consumed for o in outcomes)),
        violation_steps=violations(energies, config.e_min) if energies else 0,
        steps=len(outcomes),
        completed=final.done_reason is DoneReason.COMPLETE,
        done_reason=final.done_reason.value,
    )
