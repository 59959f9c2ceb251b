"""
SGD with momentum and coupled weight decay, plus the step learning-rate schedule.

Update order per parameter, fixed:
    g' = g + weight_decay * w
    buf = momentum * buf + g'
    w = w - lr * buf
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from errors import NonFiniteError, ShapeMismatch
from services.nn.tensor import assert_finite


@dataclass
class SGDState:
    momentum_buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: SGDState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> SGDState:
    """Update params in place, in key order; momentum buffers start at zero."""
    for name, w in params.items():
        g = grads.get(name)
        if g is None or g.shape != w.shape:
            raise ShapeMismatch(f"gradient for {name} missing or shaped {None if g is None else g.shape}, want {w.shape}")
        g = g.astype(w.dtype, copy=False)
        if weight_decay:
            g = g + w.dtype.type(weight_decay) * w
        buf = state.momentum_buffers.get(name)
        if buf is None:
            buf = np.zeros_like(w)
            state.momentum_buffers[name] = buf
        buf *= w.dtype.type(momentum)
        buf += g
        w -= w.dtype.type(lr) * buf
        assert_finite(w, f"parameter {name} after step {state.steps}", NonFiniteError)
    state.steps += 1
    return state


class SGD:
    """sgd_step bound to a model's named parameters and gradients."""

    def __init__(self, model, momentum: float = 0.9, weight_decay: float = 5e-4) -> None:
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state = SGDState()

    def step(self, lr: float) -> None:
        params = dict(self.model.named_parameters())
        grads = dict(self.model.named_gradients())
        sgd_step(params, grads, self.state, lr, self.momentum, self.weight_decay)


def lr_at(epoch: int, cfg) -> float:
    """lr0 / drop_factor ** floor(epoch / drop_every)."""
    drops = int(epoch) // int(cfg.lr_drop_every)
    return float(cfg.lr0 / (float(cfg.lr_drop_factor) ** drops))
