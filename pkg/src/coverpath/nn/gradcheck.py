"""Compare reverse-mode gradients against central finite differences."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..oracle import finite_difference
from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    max_coords: int = 20,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between backprop and finite differences.

    ``fn`` builds a scalar Tensor from the current values of ``params``.
    At most ``max_coords`` randomly chosen coordinates per parameter are
    probed.

    The denominator of the relative error is floored at ``floor * max(1, |f|)``.
    Central differences carry a rounding error of about ``1e-16 * |f| / epsilon``
    in absolute terms, so coordinates whose true derivative is exactly zero
    (a key bias under softmax, say) would otherwise score as arbitrarily
    wrong.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.grad = None
    value = fn()
    value.backward()
    scale = max(1.0, abs(float(value.data)))
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def scalar():
        with no_grad():
            return float(fn().data)

    worst = 0.0
    for p, g in zip(params, analytic):
        n = p.data.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        numeric = finite_difference(scalar, p.data, epsilon, idx)
        err = relative_error(g.reshape(-1)[idx], numeric, floor * scale)
        worst = max(worst, float(err.max()))
    return worst
