"""Supervised contrastive loss over a double batch of unit embeddings."""
from __future__ import annotations

import numpy as np

from .errors import EmptyPositives
from .model import ForwardCache, ModelParams, backward, forward_batch

DEFAULT_TAU = 0.07


def _masks(labels):
    labels = np.asarray(labels)
    n = len(labels)
    not_self = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & not_self
    counts = pos.sum(axis=1)
    if np.any(counts == 0):
        raise EmptyPositives(f"anchors {np.flatnonzero(counts == 0).tolist()} have no positive")
    return not_self, pos, counts


def supclr_loss_and_grad(z, labels, tau=DEFAULT_TAU):
    """Summed SupCon loss and its gradient w.r.t. the embeddings ``z`` (2K, d)."""
    z = np.asarray(z, dtype=np.float64)
    not_self, pos, counts = _masks(labels)
    sim = np.clip(z @ z.T, -1.0, 1.0)
    logits = sim / tau
    logits = np.where(not_self, logits, -np.inf)
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    denom = ex.sum(axis=1, keepdims=True)
    log_prob = logits - shift - np.log(denom)
    w = pos / counts[:, None]
    loss = -np.sum(np.where(pos, log_prob, 0.0) * w)
    # dL/dlogits = softmax - positive weights; logits = sim / tau
    d_sim = (ex / denom - w) / tau
    grad_z = (d_sim + d_sim.T) @ z
    return float(loss), grad_z


def supclr_loss(z, labels, tau=DEFAULT_TAU) -> float:
    return supclr_loss_and_grad(z, labels, tau)[0]


def supclr_backward(params: ModelParams, x, labels, tau=DEFAULT_TAU):
    """Loss and exact parameter gradients for raw inputs ``x`` (2K, d_x)."""
    cache = ForwardCache()
    z = forward_batch(params, x, cache)
    loss, grad_z = supclr_loss_and_grad(z, labels, tau)
    return loss, backward(params, cache, grad_z)
