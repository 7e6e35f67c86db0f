"""RMSProp with momentum on the preconditioned step.

    cache <- rho * cache + (1 - rho) * g**2
    v     <- mu * v + lr * g / sqrt(cache + eps)
    theta <- theta - v
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptState:
    lr: float = 1e-4
    rho: float = 0.9
    mu: float = 0.9
    eps: float = 1e-8
    clip_norm: float | None = None  # global gradient-norm clip, off by default
    cache: dict[str, np.ndarray] = field(default_factory=dict)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "OptState":
        state = cls(**hyper)
        state.cache = {k: np.zeros_like(v) for k, v in params.items()}
        state.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        return state


def step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptState):
    """Update ``params`` and ``state`` in place; both are returned for chaining."""
    if not state.cache:
        state.cache = {k: np.zeros_like(v) for k, v in params.items()}
        state.velocity = {k: np.zeros_like(v) for k, v in params.items()}
    if set(grads) != set(params) or set(state.cache) != set(params):
        raise ValueError("parameter, gradient and optimizer-state names differ")
    for k in params:
        if grads[k].shape != params[k].shape or state.cache[k].shape != params[k].shape:
            raise ValueError(f"shape mismatch for {k}: param {params[k].shape}, grad {grads[k].shape}")

    scale = 1.0
    if state.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > state.clip_norm:
            scale = state.clip_norm / norm

    for k, theta in params.items():
        g = grads[k] * scale if scale != 1.0 else grads[k]
        cache = state.cache[k]
        v = state.velocity[k]
        cache *= state.rho
        cache += (1.0 - state.rho) * g * g
        v *= state.mu
        v += state.lr * g / np.sqrt(cache + state.eps)
        theta -= v
    return params, state
