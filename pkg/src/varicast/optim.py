"""Adam with optional global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError
from .tensor import Tensor


class Adam:
    """Standard bias-corrected Adam over named parameter tensors.

    Parameters with no gradient this step are treated as zero-gradient
    (their moments decay). Gradient clipping rescales all gradients so
    the global norm is exactly clip_norm when it would exceed it.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def grad_norm(self) -> float:
        total = 0.0
        for _, p in self.named_params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return math.sqrt(total)

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        for name, p in self.named_params:
            if p.grad is not None and not math.isfinite(p.grad.sum()):
                raise NumericError(f"non-finite gradient in parameter {name!r}")

        norm = self.grad_norm()
        scale = 1.0
        if self.clip_norm > 0.0 and norm > self.clip_norm:
            scale = self.clip_norm / norm

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.named_params:
            g = p.grad * scale if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return norm
