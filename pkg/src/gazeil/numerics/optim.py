"""SGD and Adam over named parameter sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def _named(params):
    if isinstance(params, Mapping):
        return list(params.items())
    return [(str(i), p) for i, p in enumerate(params)]


def optimizer_step(params, state: OptimizerState, grads: Optional[Mapping] = None):
    """Apply one update in place. Gradients default to each parameter's ``.grad``."""
    named = _named(params)
    if grads is not None and not isinstance(grads, Mapping):
        grads = {name: g for (name, _), g in zip(named, grads)}
    lr = state.learning_rate
    state.step_count += 1
    t = state.step_count
    for name, p in named:
        g = (grads[name] if grads is not None else p.grad)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if state.kind == "sgd":
            p.data -= lr * g
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            v = state.second_moment[name] = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def zero_grad(params):
    for _, p in _named(params):
        p.grad = None
