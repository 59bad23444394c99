"""Adam with standard bias correction, over the named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import NetworkParams


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: NetworkParams, lr: float = 1e-5, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, arr in params.param_items():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(params: NetworkParams, grads: dict, state: AdamState):
    """One update; returns (new params, state).  State is advanced in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    new_arrays = {}
    for name, arr in params.param_items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        new_arrays[name] = arr - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params.replaced(new_arrays), state
