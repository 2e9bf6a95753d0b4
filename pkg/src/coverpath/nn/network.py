"""Policy and critic networks: CONV1 -> MHSA -> CONV2 -> max-pool -> LSTM -> linear."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .layers import ShapeError, conv2d, linear, lstm_step, maxpool2d, mhsa, pooled_extent
from .tensor import NumericError, Tensor, log_softmax, no_grad, softmax, stack


@dataclass(frozen=True)
class TrunkConfig:
    grid_size: int = 15
    in_channels: int = 4
    channels: int = 16
    kernel: int = 5
    heads: int = 4
    hidden: int = 128
    n_outputs: int = 4
    pool: int = 2
    residual: bool = True
    positional: bool = True
    init_std: float = 0.01

    @property
    def padding(self) -> int:
        return self.kernel // 2

    @property
    def lstm_input(self) -> int:
        return self.channels * pooled_extent(self.grid_size, self.pool) ** 2


RecurrentState = Tuple[Tensor, Tensor]


def zero_state(batch: int, hidden: int) -> RecurrentState:
    return Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))


class Network:
    """Parameter container plus forward pass for one trunk and output head.

    Policy and critics are both instances; the policy applies a softmax to
    the 4 outputs, the critics read them as per-action Q-values.
    """

    def __init__(self, config: TrunkConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.params: Dict[str, Tensor] = OrderedDict()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = config
        P = c.grid_size * c.grid_size
        std = c.init_std

        def weight(name, shape):
            self.params[name] = Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)

        def bias(name, shape):
            self.params[name] = Tensor(np.zeros(shape), requires_grad=True)

        weight("conv1.w", (c.channels, c.in_channels, c.kernel, c.kernel))
        bias("conv1.b", (c.channels,))
        for name in ("q", "k", "v", "o"):
            weight(f"mhsa.w{name}", (c.channels, c.channels))
            bias(f"mhsa.b{name}", (c.channels,))
        if c.positional:
            weight("mhsa.pos", (P, c.channels))
        weight("conv2.w", (c.channels, c.channels, c.kernel, c.kernel))
        bias("conv2.b", (c.channels,))
        weight("lstm.wx", (c.lstm_input, 4 * c.hidden))
        weight("lstm.wh", (c.hidden, 4 * c.hidden))
        bias("lstm.b", (4 * c.hidden,))
        weight("head.w", (c.hidden, c.n_outputs))
        bias("head.b", (c.n_outputs,))

    # -- parameter utilities -------------------------------------------------
    def parameters(self):
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy_from(self, other: "Network") -> None:
        for name, p in self.params.items():
            p.data = other.params[name].data.copy()

    def clone(self) -> "Network":
        net = Network.__new__(Network)
        net.config = self.config
        net.params = OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items()
        )
        return net

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.data.shape:
                raise ShapeError(f"{k}: checkpoint shape {arrays[k].shape} != {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    # -- forward ---------------------------------------------------------------
    def features(self, x: np.ndarray) -> Tensor:
        """Spatial trunk for a flat batch x: (M, 4, N, N) -> (M, lstm_input)."""
        c, p = self.config, self.params
        if x.ndim != 4 or x.shape[1:] != (c.in_channels, c.grid_size, c.grid_size):
            raise ShapeError(
                f"expected (M, {c.in_channels}, {c.grid_size}, {c.grid_size}) observations, got {x.shape}"
            )
        M, n = x.shape[0], c.grid_size
        h = Tensor(np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=np.float64))
        h = conv2d(h, p["conv1.w"], p["conv1.b"], c.padding).relu()
        tokens = h.reshape(M, n * n, c.channels)
        tokens = mhsa(tokens, p, c.heads, residual=c.residual, positional=c.positional)
        h = tokens.reshape(M, n, n, c.channels)
        h = conv2d(h, p["conv2.w"], p["conv2.b"], c.padding).relu()
        h = maxpool2d(h, c.pool)
        return h.reshape(M, -1)

    def forward(
        self, x: np.ndarray, state: Optional[RecurrentState] = None
    ) -> Tuple[Tensor, RecurrentState]:
        """x: (B, T, 4, N, N). Returns outputs (B, T, n_outputs) and the final state."""
        c, p = self.config, self.params
        if x.ndim != 5:
            raise ShapeError(f"expected (B, T, C, N, N) input, got {x.shape}")
        B, T = x.shape[:2]
        feats = self.features(x.reshape((B * T,) + x.shape[2:]))
        xw = linear(feats, p["lstm.wx"], p["lstm.b"]).reshape(B, T, 4 * c.hidden)
        h, cell = state if state is not None else zero_state(B, c.hidden)
        outs = []
        for t in range(T):
            h, cell = lstm_step(xw[:, t, :], h, cell, p["lstm.wh"])
            outs.append(h)
        hs = outs[0].reshape(B, 1, c.hidden) if T == 1 else stack(outs, axis=1)
        out = linear(hs, p["head.w"], p["head.b"])
        if not np.all(np.isfinite(out.data)):
            raise NumericError("non-finite network output")
        return out, (h, cell)


def policy_probs(net: Network, x: np.ndarray, state=None):
    """Returns (probs, log_probs, next_state); probs/log_probs are Tensors (B, T, A)."""
    logits, nxt = net.forward(x, state)
    return softmax(logits, axis=-1), log_softmax(logits, axis=-1), nxt


def policy_forward(
    tensor: np.ndarray, state: Optional[RecurrentState], net: Network
) -> Tuple[np.ndarray, np.ndarray, RecurrentState]:
    """Single observation (4, N, N) -> (probs[4], log_probs[4], next state)."""
    with no_grad():
        probs, logp, nxt = policy_probs(net, tensor[None, None], state)
    return probs.data[0, 0], logp.data[0, 0], nxt


def critic_forward(
    tensor: np.ndarray, state: Optional[RecurrentState], net: Network
) -> Tuple[np.ndarray, RecurrentState]:
    with no_grad():
        q, nxt = net.forward(tensor[None, None], state)
    return q.data[0, 0], nxt


def trunk_config_dict(config: TrunkConfig) -> dict:
    return asdict(config)
