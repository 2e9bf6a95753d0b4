"""Discrete-action Soft Actor-Critic with twin critics and a recurrent trunk.

Training follows the usual loop: act, store, sample a minibatch, update the
critics, the policy and the temperature, then Polyak-average the target
critics. Replay is organised by episode so fixed-length windows never cross
an episode boundary and line up with the blocks in which acting resets the
recurrent state.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .gridworld import DoneReason, GridWorld
from .metrics import EpisodeTracker, coverage_rate
from .nn.network import Network, RecurrentState, TrunkConfig, policy_probs
from .nn.optim import Adam
from .nn.tensor import NumericError, Tensor, no_grad

GREEDY = "greedy"
STOCHASTIC = "stochastic"

CHECKPOINT_VERSION = 1
LOG_FIELDS = ("episode", "reward", "coverage_pct", "violations", "energy_used", "steps", "alpha", "q_loss", "policy_loss")


class TrainingDiverged(NumericError):
    def __init__(self, message: str, checkpoint: Optional[Path] = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class SacConfig:
    lr_actor: float = 3e-4
    lr_critic: float = 3e-3
    lr_entropy: float = 1e-3
    gamma: float = 0.98
    tau: float = 0.005
    batch_size: int = 64
    target_entropy: Optional[float] = None  # None -> 0.5 * log(4)
    target_update_freq: int = 1
    buffer_capacity: int = 50_000
    window: int = 8
    init_alpha: float = 0.1
    # "sampled": one a' ~ pi(.|s') as written; "expected": sum over all actions
    target_mode: str = "sampled"
    # "bonus": y = r + g*(minQ - alpha*log pi), the usual soft value;
    # "penalty": y = r + g*(minQ + alpha*log pi), which reproduces the hand-worked
    # target 2.3583 but pushes targets down without bound as rare actions get sampled
    entropy_sign: str = "bonus"
    exploration_eps: float = 0.0
    learning_starts: int = 500
    update_every: int = 1
    updates_per_step: int = 1

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.target_mode not in ("sampled", "expected"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if self.entropy_sign not in ("bonus", "penalty"):
            raise ValueError(f"unknown entropy_sign {self.entropy_sign!r}")
        for name in ("batch_size", "window", "buffer_capacity", "target_update_freq", "update_every", "updates_per_step"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.exploration_eps <= 1:
            raise ValueError("exploration_eps must be in [0, 1]")
        if self.init_alpha <= 0:
            raise ValueError("init_alpha must be positive")

    @property
    def entropy_target(self) -> float:
        return 0.5 * math.log(4) if self.target_entropy is None else self.target_entropy


# ---------------------------------------------------------------------------
# replay


@dataclass
class Batch:
    states: np.ndarray  # (B, L+1, 4, N, N)
    actions: np.ndarray  # (B, L) int
    rewards: np.ndarray  # (B, L)
    dones: np.ndarray  # (B, L) float
    mask: np.ndarray  # (B, L) float, 0 on padding

    @property
    def size(self) -> int:
        return int(self.mask.sum())


class _Episode:
    __slots__ = ("states", "actions", "rewards", "dones")

    def __init__(self, first_state: np.ndarray):
        self.states = [first_state.astype(np.uint8)]
        self.actions: List[int] = []
        self.rewards: List[float] = []
        self.dones: List[bool] = []

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Episode-ordered transition store with FIFO eviction of whole episodes."""

    def __init__(self, capacity: int = 50_000):
        self.capacity = capacity
        self.episodes: List[_Episode] = []
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def start_episode(self, state: np.ndarray) -> None:
        self.episodes.append(_Episode(state))

    def add(self, action: int, reward: float, next_state: np.ndarray, done: bool) -> None:
        if not self.episodes:
            raise RuntimeError("start_episode() before add()")
        if not math.isfinite(reward) or not 0 <= action < 4:
            raise ValueError("invalid transition")
        ep = self.episodes[-1]
        ep.actions.append(int(action))
        ep.rewards.append(float(reward))
        ep.dones.append(bool(done))
        ep.states.append(next_state.astype(np.uint8))
        self._size += 1
        while self._size > self.capacity and len(self.episodes) > 1:
            self._size -= len(self.episodes.pop(0))

    def sample(self, batch_size: int, window: int, rng: np.random.Generator) -> Batch:
        """Uniform over window-aligned blocks across stored episodes.

        Acting resets the recurrent state every ``window`` steps, so training
        windows start at the same offsets (0, window, 2*window, ...) and see
        exactly the recurrent contexts the policy saw while acting. A final
        block shorter than ``window`` is zero-padded and masked.
        """
        eps = [e for e in self.episodes if len(e) > 0]
        if not eps:
            raise RuntimeError("replay buffer is empty")
        starts = np.array([-(-len(e) // window) for e in eps], dtype=np.int64)
        cum = np.cumsum(starts)
        picks = rng.integers(0, cum[-1], size=batch_size)
        shape = eps[0].states[0].shape
        S = np.zeros((batch_size, window + 1) + shape)
        A = np.zeros((batch_size, window), dtype=np.int64)
        R = np.zeros((batch_size, window))
        D = np.zeros((batch_size, window))
        M = np.zeros((batch_size, window))
        for b, k in enumerate(picks):
            i = int(np.searchsorted(cum, k, side="right"))
            ep = eps[i]
            start = window * int(k - (cum[i] - starts[i]))
            n = min(window, len(ep) - start)
            S[b, : n + 1] = np.stack(ep.states[start:start + n + 1])
            if n < window:
                S[b, n + 1:] = S[b, n]
            A[b, :n] = ep.actions[start:start + n]
            R[b, :n] = ep.rewards[start:start + n]
            D[b, :n] = ep.dones[start:start + n]
            M[b, :n] = 1.0
        return Batch(S, A, R, D, M)


# ---------------------------------------------------------------------------
# loss pieces as plain functions


def soft_value(min_q, log_prob, alpha: float, entropy_sign: str = "bonus"):
    """Entropy-adjusted bootstrap value of a next-state action."""
    if entropy_sign == "penalty":
        return min_q + alpha * log_prob
    return min_q - alpha * log_prob


def soft_target(reward, gamma: float, done, min_q, log_prob, alpha: float, entropy_sign: str = "bonus"):
    """y = r + gamma * (1 - done) * soft_value(min_q, log_prob)."""
    return np.asarray(reward) + gamma * (1.0 - np.asarray(done, dtype=float)) * soft_value(
        np.asarray(min_q), np.asarray(log_prob), alpha, entropy_sign
    )


def mse(pred, target, mask=None) -> float:
    err = (np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)) ** 2
    if mask is None:
        return float(err.mean())
    return float((err * mask).sum() / mask.sum())


def polyak(target: np.ndarray, source: np.ndarray, tau: float) -> np.ndarray:
    return tau * source + (1.0 - tau) * target


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(probs) - 1))


def next_state_values(net: Network, states: np.ndarray) -> np.ndarray:
    """Outputs for s_1..s_L of a (B, L+1, ...) window, as seen while acting.

    s_1..s_{L-1} carry the recurrent state of the window; s_L opens the next
    block, where acting starts from a zero state, so it is evaluated alone.
    """
    L = states.shape[1] - 1
    inner, _ = net.forward(states[:, :L])
    last, _ = net.forward(states[:, L:])
    return np.concatenate([inner.data[:, 1:], last.data], axis=1)


# ---------------------------------------------------------------------------
# agent


@dataclass
class UpdateInfo:
    q1_loss: float
    q2_loss: float
    policy_loss: float
    alpha_loss: float
    alpha: float
    entropy: float


class SacAgent:
    def __init__(self, trunk: TrunkConfig, config: SacConfig = SacConfig(), seed: int = 0):
        self.trunk = trunk
        self.config = config
        self.seed = seed
        seeds = np.random.SeedSequence(seed).spawn(4)
        self.policy = Network(trunk, np.random.default_rng(seeds[0]))
        self.critic1 = Network(trunk, np.random.default_rng(seeds[1]))
        self.critic2 = Network(trunk, np.random.default_rng(seeds[2]))
        self.target1 = self.critic1.clone()
        self.target2 = self.critic2.clone()
        self.log_alpha = Tensor(np.array(math.log(config.init_alpha)), requires_grad=True)
        self.rng = np.random.default_rng(seeds[3])
        self.opt_policy = Adam(self.policy.parameters(), config.lr_actor)
        self.opt_q1 = Adam(self.critic1.parameters(), config.lr_critic)
        self.opt_q2 = Adam(self.critic2.parameters(), config.lr_critic)
        self.opt_alpha = Adam([self.log_alpha], config.lr_entropy)
        self.updates = 0
        self.env_steps = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    # -- acting --------------------------------------------------------------
    def sample_action(
        self, state_tensor: np.ndarray, recurrent: Optional[RecurrentState] = None, mode: str = STOCHASTIC
    ) -> Tuple[int, float, RecurrentState]:
        with no_grad():
            probs, logp, nxt = policy_probs(self.policy, state_tensor[None, None], recurrent)
        p, lp = probs.data[0, 0], logp.data[0, 0]
        if mode == GREEDY:
            a = int(np.argmax(p))
        elif mode == STOCHASTIC:
            eps = self.config.exploration_eps
            if eps > 0 and self.rng.random() < eps:
                a = int(self.rng.integers(0, len(p)))
            else:
                a = sample_categorical(p, self.rng)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return a, float(lp[a]), nxt

    # -- losses --------------------------------------------------------------
    def compute_target(self, batch: Batch, next_probs: np.ndarray, next_logp: np.ndarray) -> np.ndarray:
        """Bootstrapped critic targets (B, L); no gradient reaches any network."""
        cfg = self.config
        with no_grad():
            q1t = next_state_values(self.target1, batch.states)
            q2t = next_state_values(self.target2, batch.states)
        min_q = np.minimum(q1t, q2t)
        alpha = self.alpha
        if cfg.target_mode == "sampled":
            B, L, A = next_probs.shape
            cdf = np.cumsum(next_probs, axis=-1)
            u = self.rng.random((B, L, 1)) * cdf[..., -1:]
            a_next = np.minimum((cdf <= u).sum(axis=-1), A - 1)
            mq = np.take_along_axis(min_q, a_next[..., None], axis=-1)[..., 0]
            lp = np.take_along_axis(next_logp, a_next[..., None], axis=-1)[..., 0]
            v = soft_value(mq, lp, alpha, cfg.entropy_sign)
        else:
            v = (next_probs * soft_value(min_q, next_logp, alpha, cfg.entropy_sign)).sum(axis=-1)
        return batch.rewards + cfg.gamma * (1.0 - batch.dones) * v

    @staticmethod
    def q_loss(q: Tensor, actions: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> Tensor:
        """Masked mean of (Q(s, a) - y)^2; q is (B, L, A)."""
        B, L, A = q.shape
        onehot = np.zeros((B, L, A))
        np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
        q_sa = (q * onehot).sum(axis=-1)
        err = q_sa - targets
        return (err * err * mask).sum() * (1.0 / mask.sum())

    @staticmethod
    def policy_loss(probs: Tensor, logp: Tensor, min_q: np.ndarray, alpha: float, mask: np.ndarray) -> Tensor:
        """Masked mean over states of sum_a pi(a|s) * (alpha * log pi(a|s) - minQ(s, a))."""
        per_state = (probs * (logp * alpha - min_q)).sum(axis=-1)
        return (per_state * mask).sum() * (1.0 / mask.sum())

    @staticmethod
    def alpha_loss(log_alpha: Tensor, probs: np.ndarray, logp: np.ndarray, target_entropy: float, mask: np.ndarray) -> Tensor:
        """Masked mean over states of sum_a pi(a|s) * (-alpha * (log pi(a|s) + H))."""
        weight = (probs * (logp + target_entropy)).sum(axis=-1)
        per_state_mean = float((weight * mask).sum() / mask.sum())
        return -(log_alpha.exp() * per_state_mean)

    # -- one gradient step on everything --------------------------------------
    def update(self, batch: Batch) -> UpdateInfo:
        cfg = self.config
        L = batch.actions.shape[1]
        mask = batch.mask

        cur = batch.states[:, :L]
        probs, logp, _ = policy_probs(self.policy, cur)
        with no_grad():
            last_p, last_logp, _ = policy_probs(self.policy, batch.states[:, L:])
        next_probs = np.concatenate([probs.data[:, 1:], last_p.data], axis=1)
        next_logp = np.concatenate([logp.data[:, 1:], last_logp.data], axis=1)
        y = self.compute_target(batch, next_probs, next_logp)

        losses = []
        qs = []
        for critic, opt in ((self.critic1, self.opt_q1), (self.critic2, self.opt_q2)):
            q, _ = critic.forward(cur)
            loss = self.q_loss(q, batch.actions, y, mask)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            qs.append(q.data)
        min_q = np.minimum(qs[0], qs[1])

        alpha = self.alpha
        ploss = self.policy_loss(probs, logp, min_q, alpha, mask)
        self.opt_policy.zero_grad()
        ploss.backward()
        self.opt_policy.step()

        p_np, lp_np = probs.data, logp.data
        aloss = self.alpha_loss(self.log_alpha, p_np, lp_np, cfg.entropy_target, mask)
        self.opt_alpha.zero_grad()
        aloss.backward()
        self.opt_alpha.step()

        self.updates += 1
        if self.updates % cfg.target_update_freq == 0:
            self.soft_update()

        entropy = float(((-(p_np * lp_np).sum(axis=-1)) * mask).sum() / mask.sum())
        info = UpdateInfo(losses[0], losses[1], float(ploss.data), float(aloss.data), self.alpha, entropy)
        if not all(math.isfinite(v) for v in asdict(info).values()):
            raise NumericError(f"non-finite loss: {info}")
        return info

    def soft_update(self, tau: Optional[float] = None) -> None:
        tau = self.config.tau if tau is None else tau
        if not 0 < tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        for tgt, src in ((self.target1, self.critic1), (self.target2, self.critic2)):
            for name, p in tgt.params.items():
                p.data = polyak(p.data, src.params[name].data, tau)

    # -- checkpoints -----------------------------------------------------------
    def save(self, path, **meta) -> None:
        arrays: Dict[str, np.ndarray] = {}
        for tag, net in self._networks():
            for k, v in net.state_arrays().items():
                arrays[f"{tag}/{k}"] = v
        arrays["log_alpha"] = self.log_alpha.data
        for tag, opt in self._optimizers():
            arrays.update(opt.state_arrays(f"opt/{tag}"))
        header = {
            "version": CHECKPOINT_VERSION,
            "trunk": asdict(self.trunk),
            "sac": asdict(self.config),
            "seed": self.seed,
            "updates": self.updates,
            "env_steps": self.env_steps,
            "rng": self.rng.bit_generator.state,
            "meta": meta,
        }
        arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> Tuple["SacAgent", dict]:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        header = json.loads(arrays.pop("header").tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        agent = cls(TrunkConfig(**header["trunk"]), SacConfig(**header["sac"]), header["seed"])
        for tag, net in agent._networks():
            net.load_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith(tag + "/")})
        agent.log_alpha.data = np.array(arrays["log_alpha"], dtype=np.float64)
        for tag, opt in agent._optimizers():
            opt.load_arrays(arrays, f"opt/{tag}")
        agent.updates = header["updates"]
        agent.env_steps = header.get("env_steps", 0)
        agent.rng.bit_generator.state = header["rng"]
        return agent, header["meta"]

    def _networks(self):
        return (
            ("policy", self.policy),
            ("critic1", self.critic1),
            ("critic2", self.critic2),
            ("target1", self.target1),
            ("target2", self.target2),
        )

    def _optimizers(self):
        return (("policy", self.opt_policy), ("q1", self.opt_q1), ("q2", self.opt_q2), ("alpha", self.opt_alpha))


# ---------------------------------------------------------------------------
# episodes and training


@dataclass
class EpisodeRecord:
    episode: int
    reward: float
    coverage_pct: float
    violations: int
    energy_used: float
    steps: int
    alpha: float
    q_loss: float
    policy_loss: float
    done_reason: str = ""

    def row(self) -> List[str]:
        return [
            str(self.episode),
            repr(float(self.reward)),
            repr(float(self.coverage_pct)),
            str(self.violations),
            repr(float(self.energy_used)),
            str(self.steps),
            repr(float(self.alpha)),
            repr(float(self.q_loss)),
            repr(float(self.policy_loss)),
        ]


def write_log(records: Sequence[EpisodeRecord], path, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LOG_FIELDS)
        for r in records:
            w.writerow(r.row())


def read_log(path) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def run_episode(env: GridWorld, agent: SacAgent, mode: str = GREEDY, seed: int = 0, record_trace: bool = False):
    """Roll out one episode without learning. Returns (EpisodeStats, trace)."""
    obs = env.reset(seed)
    tracker = EpisodeTracker.for_env(env.grid, env.config)
    hidden = None
    window = agent.config.window
    trace = [env.state] if record_trace else None
    t = 0
    while not env.state.done:
        if t % window == 0:
            hidden = None
        a, _, hidden = agent.sample_action(obs, hidden, mode)
        out = env.step(a)
        tracker.record(out)
        obs = out.next_state_tensor
        if record_trace:
            trace.append(out.state)
        t += 1
    return tracker.stats(), trace


def train(
    env: GridWorld,
    agent: SacAgent,
    episodes: int,
    callbacks: Sequence[Callable[[EpisodeRecord, SacAgent], None]] = (),
    buffer: Optional[ReplayBuffer] = None,
    start_episode: int = 1,
    diagnostic_path=None,
) -> List[EpisodeRecord]:
    """Run ``episodes`` training episodes; returns one record per episode.

    Acting uses the recurrent state carried for at most ``window`` steps,
    matching the zero-initialised windows the networks are trained on.
    """
    cfg = agent.config
    buffer = buffer if buffer is not None else ReplayBuffer(cfg.buffer_capacity)
    records: List[EpisodeRecord] = []
    total_steps = agent.env_steps
    for ep in range(start_episode, start_episode + episodes):
        obs = env.reset(seed=ep)
        buffer.start_episode(obs)
        tracker = EpisodeTracker.for_env(env.grid, env.config)
        hidden = None
        q_losses, p_losses = [], []
        t = 0
        while not env.state.done:
            if t % cfg.window == 0:
                hidden = None
            a, _, hidden = agent.sample_action(obs, hidden, STOCHASTIC)
            out = env.step(a)
            tracker.record(out)
            # the horizon cut is not part of the task, so truncated steps still bootstrap
            terminal = out.done and out.done_reason is not DoneReason.TRUNCATED
            buffer.add(a, out.reward, out.next_state_tensor, terminal)
            obs = out.next_state_tensor
            t += 1
            total_steps += 1
            agent.env_steps = total_steps
            if total_steps >= cfg.learning_starts and total_steps % cfg.update_every == 0:
                for _ in range(cfg.updates_per_step):
                    try:
                        info = agent.update(buffer.sample(cfg.batch_size, cfg.window, agent.rng))
                    except NumericError as exc:
                        ck = None
                        if diagnostic_path is not None:
                            ck = Path(diagnostic_path)
                            agent.save(ck, episode=ep, reason=str(exc))
                        raise TrainingDiverged(f"episode {ep}: {exc}", ck) from exc
                    q_losses.append(0.5 * (info.q1_loss + info.q2_loss))
                    p_losses.append(info.policy_loss)
        stats = tracker.stats()
        rec = EpisodeRecord(
            episode=ep,
            reward=stats.total_reward,
            coverage_pct=coverage_rate(stats),
            violations=stats.violation_steps,
            energy_used=stats.energy_consumed,
            steps=stats.steps,
            alpha=agent.alpha,
            q_loss=float(np.mean(q_losses)) if q_losses else float("nan"),
            policy_loss=float(np.mean(p_losses)) if p_losses else float("nan"),
            done_reason=stats.done_reason,
        )
        records.append(rec)
        for cb in callbacks:
            cb(rec, agent)
    return records
