"""Central finite-difference oracle for the network gradient."""

import numpy as np

from mcsloc.tcn import cross_entropy, forward


def loss_of(net, x, y):
    return cross_entropy(forward(net, x), y)


def numeric_gradient(net, x, y, name, h=1e-6):
    p = net.params[name]
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        up = loss_of(net, x, y)
        p[i] = old - h
        down = loss_of(net, x, y)
        p[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric):
    """Largest absolute disagreement relative to the tensor's largest gradient entry."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
    return float(np.abs(analytic - numeric).max() / scale)
