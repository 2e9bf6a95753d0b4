"""Differentiable layers used by the policy and critic trunks.

Feature maps are channels-last: ``(batch, height, width, channels)``.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, softmax


class ShapeError(ValueError):
    pass


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation.

    x: (B, H, W, Cin); w: (Cout, Cin, k, k); b: (Cout,). Returns (B, Ho, Wo, Cout).
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B, H, W, C) input, got {x.shape}")
    cout, cin, k, k2 = w.shape
    if k != k2 or x.shape[3] != cin or b.shape != (cout,):
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape} / bias {b.shape}")
    B, H, W, _ = x.shape
    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    Ho, Wo = H + 2 * p - k + 1, W + 2 * p - k + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    # (B, Ho, Wo, Cin, k, k) -> (B*Ho*Wo, Cin*k*k)
    cols = sliding_window_view(xp, (k, k), axis=(1, 2)).reshape(B * Ho * Wo, cin * k * k)
    wmat = w.data.reshape(cout, cin * k * k)
    out = (cols @ wmat.T + b.data).reshape(B, Ho, Wo, cout)

    def backward(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            # input gradient = full correlation of g with the flipped kernel
            q = k - 1 - p
            gp = np.pad(g, ((0, 0), (q, q), (q, q), (0, 0))) if q else g
            gcols = sliding_window_view(gp, (k, k), axis=(1, 2))[:, :H, :W]
            gcols = gcols.reshape(B * H * W, cout * k * k)
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * k * k)
            gx = (gcols @ wflip.T).reshape(B, H, W, cin)
        return gx, gw, gb

    return Tensor._make(out, (x, w, b), backward)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; odd extents are replication-padded first.

    Ties route the gradient to the first maximum in row-major window order.
    """
    B, H, W, C = x.shape
    ph, pw = (-H) % size, (-W) % size
    xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge") if (ph or pw) else x.data
    Hp, Wp = H + ph, W + pw
    Ho, Wo = Hp // size, Wp // size
    win = xp.reshape(B, Ho, size, Wo, size, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros(win.shape)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gxp = gwin.reshape(B, Ho, Wo, C, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(B, Hp, Wp, C)
        if ph or pw:
            gx = gxp[:, :H, :W, :].copy()
            # padded rows/cols are copies of the last real row/col
            if ph:
                gx[:, H - 1, :, :] += gxp[:, H:, :W, :].sum(axis=1)
            if pw:
                gx[:, :, W - 1, :] += gxp[:, :H, W:, :].sum(axis=2)
            if ph and pw:
                gx[:, H - 1, W - 1, :] += gxp[:, H:, W:, :].sum(axis=(1, 2))
            return (gx,)
        return (gxp,)

    return Tensor._make(out, (x,), backward)


def pooled_extent(n: int, size: int = 2) -> int:
    return -(-n // size)


def mhsa(
    x: Tensor,
    params: dict,
    heads: int,
    prefix: str = "mhsa.",
    residual: bool = True,
    positional: bool = True,
) -> Tensor:
    """Multi-head self-attention over tokens x: (B, P, D).

    Per head: softmax(Q K^T / sqrt(D/heads)) V; heads are concatenated and
    passed through an output projection. A learned positional embedding
    ``pos`` (P, D) is added to the tokens first and, when ``residual`` is set,
    the block input is added back to the output.
    """
    B, P, D = x.shape
    if D % heads:
        raise ShapeError(f"embedding dim {D} not divisible by {heads} heads")
    dh = D // heads
    h = x + params[prefix + "pos"] if positional else x

    def proj(name):
        t = h @ params[prefix + "w" + name] + params[prefix + "b" + name]
        return t.reshape(B, P, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = proj("q"), proj("k"), proj("v")
    # scale the (small) queries rather than the (P x P) scores
    scores = (q * (1.0 / math.sqrt(dh))) @ k.transpose(0, 1, 3, 2)
    attn = softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, P, D)
    out = ctx @ params[prefix + "wo"] + params[prefix + "bo"]
    return out + x if residual else out


def lstm_step(
    xw: Tensor, h: Tensor, c: Tensor, w_h: Tensor
) -> Tuple[Tensor, Tensor]:
    """One LSTM cell update.

    ``xw`` is the precomputed input contribution ``x @ W_x + b`` of shape
    (B, 4H), gate order input, forget, candidate, output.
    """
    H = h.shape[-1]
    gates = xw + h @ w_h
    i = gates[:, 0:H].sigmoid()
    f = gates[:, H:2 * H].sigmoid()
    g = gates[:, 2 * H:3 * H].tanh()
    o = gates[:, 3 * H:4 * H].sigmoid()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, c_next
