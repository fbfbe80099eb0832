"""AdamW with a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine decay from ``initial`` to ``final`` over ``horizon`` steps, then flat."""

    initial: float = 5e-3
    final: float = 1e-4
    horizon: int = 1

    def __post_init__(self):
        if self.final > self.initial:
            raise ValueError("final learning rate must not exceed the initial one")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")

    def __call__(self, step: int) -> float:
        frac = min(max(step, 0), self.horizon) / self.horizon
        return self.final + 0.5 * (self.initial - self.final) * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    schedule: CosineSchedule
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.schedule(self.step_count)


class AdamW:
    """Adaptive moment estimation with decoupled weight decay.

    Moments exist only for the parameters handed to the constructor, so a
    frozen subset never acquires optimizer state.
    """

    def __init__(self, params: dict[str, Tensor], schedule: CosineSchedule,
                 weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = OptimizerState(schedule, weight_decay, tuple(betas), eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        st = self.state
        missing = [n for n, p in self.params.items() if p.grad is None]
        if len(missing) == len(self.params):
            raise RuntimeError("optimizer step called before backward")
        lr = st.lr
        b1, b2 = st.betas
        t = st.step_count + 1
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + st.eps)
            p.data = p.data - lr * (update + st.weight_decay * p.data)
        st.step_count = t
