"""Bias-corrected Adam on dictionaries of arrays."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError


@dataclass
class AdamState:
    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, **kw):
        return cls({k: np.array(p, dtype=float) for k, p in params.items()},
                   {k: np.zeros_like(p, dtype=float) for k, p in params.items()},
                   {k: np.zeros_like(p, dtype=float) for k, p in params.items()}, 0, **kw)


def adam_step(state, grad, lr):
    """One Adam update. Returns a new state; the input state is not modified."""
    if set(grad) != set(state.params):
        raise ArgumentError("gradient keys do not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    params, m, v = {}, {}, {}
    for k, p in state.params.items():
        g = np.asarray(grad[k], dtype=float)
        if g.shape != p.shape:
            raise ArgumentError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m[k] / (1.0 - b1 ** t)
        v_hat = v[k] / (1.0 - b2 ** t)
        params[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(params, m, v, t, b1, b2, state.eps)
