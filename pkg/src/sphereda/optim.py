"""SGD-momentum and LARS updates plus the warmup/cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, OutOfRange, ShapeMismatch


@dataclass(frozen=True)
class ScheduleConfig:
    warmup_iters: int = 250
    total_iters: int = 4000
    peak_lr: float = 0.05

    def __post_init__(self):
        if not 0 < self.warmup_iters < self.total_iters:
            raise InvalidConfig("need 0 < warmup_iters < total_iters")


def lr_at(schedule: ScheduleConfig, it: int) -> float:
    """Linear warmup to ``peak_lr`` then cosine decay to zero."""
    if not 0 <= it <= schedule.total_iters:
        raise OutOfRange(f"iteration {it} outside [0, {schedule.total_iters}]")
    if it <= schedule.warmup_iters:
        return schedule.peak_lr * it / schedule.warmup_iters
    frac = (it - schedule.warmup_iters) / (schedule.total_iters - schedule.warmup_iters)
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    kind: str = "lars"
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coeff: float = 1e-3
    buffers: list = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("lars", "sgd"):
            raise InvalidConfig(f"unknown optimizer kind {self.kind!r}")

    def init_buffers(self, tensors):
        self.buffers = [np.zeros_like(t) for t in tensors]
        return self


def local_rate(param, grad, weight_decay, trust_coeff):
    """Layer-wise trust ratio for one parameter tensor."""
    p_norm = float(np.linalg.norm(param))
    g_norm = float(np.linalg.norm(grad))
    return trust_coeff * p_norm / (g_norm + weight_decay * p_norm + 1e-12)


def optimizer_step(state: OptimizerState, tensors, grads, lr):
    """Update ``tensors`` in place; buffers in ``state`` are updated too.

    sgd:  buf <- m buf + (g + wd p);          p <- p - lr buf
    lars: buf <- m buf + rate (g + wd p);     p <- p - lr buf
    """
    if lr < 0:
        raise InvalidConfig("learning rate must be non-negative")
    if not state.buffers:
        state.init_buffers(tensors)
    if len(grads) != len(tensors) or len(state.buffers) != len(tensors):
        raise ShapeMismatch("parameter, gradient and buffer lists differ in length")
    for p, g, buf in zip(tensors, grads, state.buffers):
        if p.shape != g.shape or p.shape != buf.shape:
            raise ShapeMismatch(f"shape mismatch {p.shape} / {g.shape} / {buf.shape}")
        d = g + state.weight_decay * p
        if state.kind == "lars":
            d = local_rate(p, g, state.weight_decay, state.trust_coeff) * d
        buf *= state.momentum
        buf += d
        p -= lr * buf
    state.step_count += 1
    return tensors
