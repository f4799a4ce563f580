"""Adam with bias correction, operating in place on :class:`Tensor` params."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_param(cls, param: Tensor) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data))


def adam_step(
    param: Tensor,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    if param.grad is None:
        raise ContractError(f"adam_step: {param!r} has no gradient")
    if state.m.shape != param.shape:
        raise ContractError(f"adam_step: state shape {state.m.shape} != param {param.shape}")
    g = param.grad
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    """Adam over a named parameter dict; skips params without a gradient."""

    params: dict[str, Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states.setdefault(name, AdamState.for_param(p))

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is not None:
                adam_step(p, self.states[name], lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
