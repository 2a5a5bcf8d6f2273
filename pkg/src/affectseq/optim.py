"""Adam over named parameter dictionaries.

Functional style: steps return fresh parameter and state dicts so a
caller can diff before/after or replay a run. Everything is float64 and
fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params):
    return AdamState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns (new_params, new_state)."""
    t = state.step + 1
    new_params, m, v = {}, {}, {}
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        update = (m[name] / bc1) / (np.sqrt(v[name] / bc2) + eps)
        new_params[name] = p - lr * update
    return new_params, AdamState(step=t, m=m, v=v)
