"""
Checking the hand-written autodiff
==================================

Policy and critics are float64 networks built on a small tape-based
reverse-mode engine. This script runs the pieces one at a time and compares
every gradient with central finite differences.
"""

# %%
import numpy as np

from coverpath.nn.gradcheck import grad_check
from coverpath.nn.layers import conv2d, maxpool2d
from coverpath.nn.network import Network, TrunkConfig, policy_probs
from coverpath.nn.tensor import Tensor

rng = np.random.default_rng(0)


def param(*shape):
    return Tensor(rng.normal(0, 0.5, size=shape), requires_grad=True)


def projected(t, seed):
    # a random projection so no coordinate gets a symmetric, trivially-right gradient
    return (t * Tensor(np.random.default_rng(seed).normal(size=t.shape))).sum()


# %%
x, w, b = param(2, 6, 6, 4), param(8, 4, 5, 5), param(8)
print("conv 5x5   ", grad_check(lambda: projected(conv2d(x, w, b, padding=2), 1), [x, w, b]))
print("max-pool   ", grad_check(lambda: projected(maxpool2d(x), 2), [x]))

# %%
# The whole trunk: conv, attention, conv, pool, LSTM, head. Sizes are
# shrunk so the finite differences finish in a few seconds.
net = Network(TrunkConfig(grid_size=6, channels=4, heads=2, hidden=8, init_std=0.3), rng)
states = (rng.random((2, 3, 4, 6, 6)) < 0.3).astype(float)


def loss():
    probs, logp, _ = policy_probs(net, states)
    return projected(logp, 3)


print("full policy", grad_check(loss, net.parameters(), max_coords=6))

# %%
# A deliberately broken gradient is caught: scale one backward by 1.1.
a = param(3, 3)


def broken():
    out = (a * a).sum()
    original = out._backward

    def scaled(g):
        return tuple(None if t is None else 1.1 * t for t in original(g))

    out._backward = scaled
    return out


print("broken op  ", grad_check(broken, [a]))
