"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autograd import Parameter, ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must lie in (0, 1), got ({self.beta1}, {self.beta2})")


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One in-place Adam update of ``params``; returns the (mutated) state."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    step = state.lr / c1
    inv_c2 = 1.0 / c2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: grad {g.shape} does not match parameter {p.name!r} {p.shape}")
        g = g.astype(m.dtype, copy=False)
        # in-place forms of m = b1 m + (1-b1) g, v = b2 v + (1-b2) g^2
        m *= b1
        m += (1 - b1) * g
        v *= b2
        tmp = np.square(g)
        tmp *= 1 - b2
        v += tmp
        np.multiply(v, inv_c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.epsilon
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p.data -= tmp.astype(p.data.dtype, copy=False)
    return state


class Adam:
    """Stateful wrapper binding one ``AdamState`` to a fixed parameter list."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    @property
    def step_count(self) -> int:
        return self.state.step_count

    def step(self, grads: Sequence[np.ndarray] | Mapping[Parameter, np.ndarray]) -> None:
        if isinstance(grads, Mapping):
            grads = [grads[p] for p in self.params]
        adam_step(self.params, list(grads), self.state)
