"""Adam with bias correction and the per-epoch exponential learning-rate decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float):
    """One Adam update. Pure: returns new parameter arrays and a new state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params, grads and state must have the same length")
    b1, b2, eps = state.beta1, state.beta2, state.eps
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"adam_step: shape mismatch param {p.shape} grad {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, eps)


@dataclass
class Adam:
    """Stateful wrapper that updates a list of parameter tensors in place."""

    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros_like([p.data for p in self.params], self.beta1, self.beta2, self.eps)

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                    self.lr if lr is None else lr)
        for p, d in zip(self.params, new):
            p.data = d

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def lr_schedule(epoch: int, lr0: float, decay: float = 0.05) -> float:
    """``lr0 * exp(-decay * epoch)``."""
    if lr0 <= 0:
        raise ValueError(f"lr0 must be positive, got {lr0}")
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    return lr0 * math.exp(-decay * epoch)
