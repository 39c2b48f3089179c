"""Encoder + projection head as a plain numpy MLP with hand-written backprop.

The network is a chain of affine layers with ReLU between consecutive layers.
The first ``n_encoder`` layers form the encoder; the rest form the head. When
``normalize_output`` is set the final output is L2-normalized.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, ZeroVector
from .sphere import NORM_EPS

DEFAULT_ENCODER_DIMS = (64, 32)
DEFAULT_HEAD_DIMS = (32, 16)


@dataclass
class ModelParams:
    weights: list            # weights[i] has shape (fan_in, fan_out)
    biases: list
    n_encoder: int
    normalize_output: bool = True

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self):
        """Flat list of parameter arrays (weights and biases interleaved)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_tensors(self, tensors):
        tensors = list(tensors)
        return ModelParams(tensors[0::2], tensors[1::2], self.n_encoder, self.normalize_output)

    def copy(self):
        return self.with_tensors([t.copy() for t in self.tensors()])


def init_params(d_x, encoder_dims=DEFAULT_ENCODER_DIMS, head_dims=DEFAULT_HEAD_DIMS,
                rng=None, normalize_output=True) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    dims = [d_x, *encoder_dims, *head_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, len(encoder_dims), normalize_output)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)   # input to each affine layer
    pre: list = field(default_factory=list)      # affine outputs
    out_norms: np.ndarray | None = None
    output: np.ndarray | None = None


def _affine_chain(params, x, cache=None, stop=None):
    h = x
    n = len(params.weights) if stop is None else stop
    for i in range(n):
        if cache is not None:
            cache.inputs.append(h)
        a = h @ params.weights[i] + params.biases[i]
        if cache is not None:
            cache.pre.append(a)
        h = np.maximum(a, 0.0) if i < len(params.weights) - 1 else a
    return h


def encode(params: ModelParams, x):
    """Encoder features (post-ReLU activations of the last encoder layer)."""
    return _affine_chain(params, np.atleast_2d(np.asarray(x, dtype=np.float64)),
                         stop=params.n_encoder)


def forward_batch(params: ModelParams, x, cache: ForwardCache | None = None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatch(f"expected input dim {params.weights[0].shape[0]}, got {x.shape[1]}")
    out = _affine_chain(params, x, cache)
    if not params.normalize_output:
        if cache is not None:
            cache.output = out
        return out
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroVector("projection output is numerically zero")
    z = out / norms
    if cache is not None:
        cache.out_norms = norms
        cache.output = z
    return z


def forward(params: ModelParams, x):
    """Embed a single input vector."""
    return forward_batch(params, x)[0]


def backward(params: ModelParams, cache: ForwardCache, grad_out):
    """Gradients of a scalar loss w.r.t. all parameters, given dL/d(output).

    Returns a list aligned with ``params.tensors()``.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if params.normalize_output:
        z = cache.output
        # d(u/|u|)/du applied to g: (g - z (z.g)) / |u|
        g = (g - z * np.sum(z * g, axis=1, keepdims=True)) / cache.out_norms
    n = len(params.weights)
    grads = [None] * (2 * n)
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * (cache.pre[i] > 0)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return grads
