"""Adam parameter updates with bias correction.

Parameter sets and gradient sets share one structure: a dict mapping
layer id -> LayerParams (weights + bias arrays). adam_step is pure; it
returns fresh parameter and state objects and never touches its inputs,
so a training loop can keep the previous step alive (e.g. for the
best-validation checkpoint) at no extra cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LayerParams
from .tensor import ShapeError


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class AdamState:
    """First/second moment estimates per parameter tensor plus step count."""
    m: dict
    v: dict
    t: int = 0


def _zeros_like_params(params: dict) -> dict:
    return {
        name: LayerParams(np.zeros_like(p.weights), np.zeros_like(p.bias))
        for name, p in params.items()
    }


def adam_init(params: dict) -> AdamState:
    """Zero moments matching every parameter tensor; t = 0."""
    return AdamState(m=_zeros_like_params(params),
                     v=_zeros_like_params(params), t=0)


def _update(theta, g, m, v, t, hyper: AdamHyper):
    m_new = hyper.beta1 * m + (1.0 - hyper.beta1) * g
    v_new = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
    m_hat = m_new / (1.0 - hyper.beta1 ** t)
    v_hat = v_new / (1.0 - hyper.beta2 ** t)
    theta_new = theta - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    return theta_new.astype(theta.dtype), m_new, v_new


def adam_step(params: dict, grads: dict, state: AdamState,
              hyper: AdamHyper):
    """One Adam update over every tensor in the parameter set.

    Returns (new_params, new_state); inputs are left untouched.
    """
    if set(grads) != set(params):
        raise ShapeError("gradient set keys do not match parameter set keys")
    t = state.t + 1
    new_params: dict = {}
    new_m: dict = {}
    new_v: dict = {}
    for name in params:
        p, g = params[name], grads[name]
        if g.weights.shape != p.weights.shape or g.bias.shape != p.bias.shape:
            raise ShapeError(f"gradient shape mismatch for layer {name!r}")
        w, mw, vw = _update(p.weights, g.weights, state.m[name].weights,
                            state.v[name].weights, t, hyper)
        b, mb, vb = _update(p.bias, g.bias, state.m[name].bias,
                            state.v[name].bias, t, hyper)
        new_params[name] = LayerParams(w, b)
        new_m[name] = LayerParams(mw, mb)
        new_v[name] = LayerParams(vw, vb)
    return new_params, AdamState(m=new_m, v=new_v, t=t)
