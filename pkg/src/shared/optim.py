"""Adam with bias correction, updating named parameter tensors in place."""

from dataclasses import dataclass, field

import numpy as np

from shared.autodiff import Tensor
from shared.errors import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]
) -> AdamState:
    """
    Apply one Adam update to every parameter that has a gradient.

    Moments are created lazily, shaped like their parameters.

    Raises:
        ShapeError: If a gradient's shape differs from its parameter's
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ShapeError(
                f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}"
            )
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state
