"""Adam optimizer for named parameter nodes."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for Adam with bias correction."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Apply one Adam update in place.

    params/grads: name -> ndarray. Raises on non-finite gradients; the
    step counter advances only on a successful update.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
    t = state.step_count + 1
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step_count = t
    return params


class Adam:
    """Convenience wrapper stepping a dict of name -> ValueNode."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for node in self.params.values():
            node.grad = None

    def step(self):
        grads = {
            name: node.grad
            for name, node in self.params.items()
            if node.grad is not None
        }
        adam_step(self.state, {n: p.data for n, p in self.params.items()}, grads)
