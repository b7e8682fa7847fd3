"""Adam with bias correction, one state per network.

Defaults follow the training recipe used throughout this project:
lr 2e-4, beta1 0.5, beta2 0.999, eps 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
    """Zeroed moments for a parameter list (arrays, or their shapes)."""
    if not 0.0 < beta1 < 1.0 or not 0.0 < beta2 < 1.0:
        raise ValueError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
    if lr <= 0 or eps <= 0:
        raise ValueError(f"lr and eps must be positive, got {lr}, {eps}")
    shapes = [p.shape if hasattr(p, "shape") else tuple(p) for p in params]
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m=[np.zeros(s) for s in shapes],
                     v=[np.zeros(s) for s in shapes])


def adam_step(state, params, grads, names=None):
    """One in-place Adam update of params.

    Aborts (before touching anything) if any gradient is non-finite,
    naming the offending tensor and coordinate.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("params/grads do not match optimizer state")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(np.asarray(g)))[0]
            label = names[i] if names else f"param[{i}]"
            raise FloatingPointError(
                f"non-finite gradient in {label} at coordinate {tuple(int(j) for j in bad)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
