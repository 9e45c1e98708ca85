"""
PATrack Core - AdamW optimizer.

Decoupled weight decay: the decay term is applied to the parameter directly,
before and independent of the Adam moment update.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from patrack.core.tensor import Tensor
from patrack.exceptions import DimensionException, NumericFailureException


@dataclass
class AdamState:
    """First/second moments and step count for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class OptimizerState:
    slots: dict[str, AdamState] = field(default_factory=dict)

    def slot(self, name: str, like: np.ndarray) -> AdamState:
        state = self.slots.get(name)
        if state is None:
            state = AdamState(m=np.zeros_like(like), v=np.zeros_like(like))
            self.slots[name] = state
        elif state.m.shape != like.shape:
            raise DimensionException("adamw_step", state.m.shape, like.shape, reason=f"state for '{name}'")
        return state


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One AdamW update of every parameter that has a gradient."""
    beta1, beta2 = betas
    for name, grad in grads.items():
        if grad is not None and np.isnan(grad).any():
            raise NumericFailureException(f"NaN gradient for parameter '{name}'", details={"parameter": name})

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise DimensionException("adamw_step", param.shape, grad.shape, reason=f"gradient for '{name}'")
        slot = state.slot(name, param.data)
        slot.step += 1
        p = param.data.astype(np.float64)
        g = grad.astype(np.float64)

        p = p - lr * weight_decay * p
        slot.m = beta1 * slot.m + (1.0 - beta1) * g
        slot.v = beta2 * slot.v + (1.0 - beta2) * g * g
        m_hat = slot.m / (1.0 - beta1**slot.step)
        v_hat = slot.v / (1.0 - beta2**slot.step)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        param.assign(p)


class AdamW:
    """Stateful wrapper around adamw_step for a fixed parameter set."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptimizerState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        adamw_step(
            self.params,
            {name: p.grad for name, p in self.params.items()},
            self.state,
            lr=self.lr,
            betas=self.betas,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class ExponentialDecay:
    """lr = base_lr * ratio ** epoch."""

    base_lr: float
    ratio: float

    def __call__(self, epoch: int) -> float:
        return self.base_lr * self.ratio**epoch
