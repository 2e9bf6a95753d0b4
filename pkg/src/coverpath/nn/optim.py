"""Adam optimizer over :class:`Tensor` parameters."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str) -> None:
        self.t = int(arrays[f"{prefix}.t"])
        self.m = [np.array(arrays[f"{prefix}.m{i}"]) for i in range(len(self.params))]
        self.v = [np.array(arrays[f"{prefix}.v{i}"]) for i in range(len(self.params))]
