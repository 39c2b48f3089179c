"""Central finite differences over every parameter of a model."""
import numpy as np

from sphereda.loss import supclr_loss
from sphereda.model import forward_batch


def numeric_grads(params, x, labels, tau, step=1e-5):
    grads = []
    for t in params.tensors():
        g = np.zeros_like(t)
        it = np.nditer(t, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = t[i]
            t[i] = orig + step
            up = supclr_loss(forward_batch(params, x), labels, tau)
            t[i] = orig - step
            down = supclr_loss(forward_batch(params, x), labels, tau)
            t[i] = orig
            g[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    """Largest elementwise |a - n| / max(|a|, |n|, 1e-6 floor relative to tensor scale)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(n).max(), 1e-8)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3 * scale)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
