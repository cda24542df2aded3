"""Adam with bias correction, step-halving learning rate, gradient-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array)."""
    missing = [name for name in params if name not in grads]
    if missing:
        raise ContractError(f"no gradient for parameters: {', '.join(missing)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.dims:
            raise ContractError(f"gradient for {name} has dims {g.shape}, parameter {p.dims}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.dims)
            state.v[name] = np.zeros(p.dims)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    return state


def step_lr(base: float, iteration: int, period: int) -> float:
    """Learning rate halved every ``period`` iterations."""
    return base * 2.0 ** (-(iteration // period))


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm."""
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm and total > max_norm:
        f = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * f
    return total
