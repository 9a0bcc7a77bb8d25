"""Bias-corrected Adam over a named parameter mapping."""

import numpy as np

from .tensor import ShapeError


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, lr=0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, state):
    """One update over `params` (mapping name -> Tensor with populated grads).

    Gradients are zeroed after the update; `state.t` advances by exactly one.
    """
    for name, p in params.items():
        if p._grad is None:
            raise ValueError(f"adam_step: parameter '{name}' has no gradient")
        if p._grad.shape != p.data.shape:
            raise ShapeError(f"adam_step: gradient shape {p._grad.shape} does not match "
                             f"parameter '{name}' shape {p.data.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p._grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        g[...] = 0.0
