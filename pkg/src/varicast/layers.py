"""Small parameter containers shared by the model sub-modules."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Affine:
    """y = x @ w + b with w: (fan_in, fan_out)."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "Affine":
        return cls(
            w=Tensor(uniform_init(rng, fan_in, (fan_in, fan_out)), requires_grad=True),
            b=Tensor(uniform_init(rng, fan_in, (fan_out,)), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Mlp:
    """Two affine layers with a nonlinearity in between (default tanh)."""

    def __init__(self, first: Affine, second: Affine, act=T.tanh):
        self.first = first
        self.second = second
        self.act = act

    @classmethod
    def init(cls, rng, fan_in: int, hidden: int, fan_out: int, act=T.tanh) -> "Mlp":
        return cls(Affine.init(rng, fan_in, hidden), Affine.init(rng, hidden, fan_out), act)

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(self.act(self.first(x)))

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        return self.first.params(f"{prefix}.l1") + self.second.params(f"{prefix}.l2")
