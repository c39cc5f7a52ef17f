"""SGD with momentum, weight decay, and per-group learning rates."""

from __future__ import annotations

import numpy as np


class MissingGradientError(RuntimeError):
    """A trainable parameter reached the optimizer without a gradient."""


class SGD:
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.

    ``lr_per_group`` maps each parameter-group tag to its learning rate;
    every parameter must belong to a tagged group.
    """

    def __init__(self, params, lr_per_group: dict[str, float], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr_per_group = dict(lr_per_group)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_scale = 1.0
        self._velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
        for name in params.names():
            group = params.group_of(name)
            if group not in self.lr_per_group:
                raise KeyError(f"no learning rate for parameter group '{group}'")

    def step(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                raise MissingGradientError(f"parameter '{name}' has no gradient")
            v = self._velocity[name]
            v *= self.momentum
            v += t.grad
            if self.weight_decay:
                v += self.weight_decay * t.data
            lr = self.lr_per_group[self.params.group_of(name)] * self.lr_scale
            t.data -= lr * v

    def zero_grad(self) -> None:
        for _, t in self.params.items():
            t.zero_grad()


def decayed_lr(base_lr: float, epoch: int, factor: float, every: int) -> float:
    """Stepwise schedule: base * factor**(epoch // every)."""
    if every <= 0:
        return base_lr
    return base_lr * factor ** (epoch // every)
