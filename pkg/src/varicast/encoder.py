"""Multi-branch condition encoder.

Three complementary views of the history block feed a learned fusion:
a bidirectional LSTM over the raw rows, an MLP over per-column
statistical moments, and a 1-D convolution over first differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import SizeError
from .layers import Affine, Mlp, uniform_init
from .tensor import Tensor

_SIGMA_FLOOR = 1e-8
# keeps sqrt differentiable at exactly-constant columns; the degenerate
# branch masks the value and its gradient anyway
_VAR_TINY = 1e-300


class LstmDirection:
    """One direction of the BiLSTM; gate order in the packed weights is i,f,g,o."""

    def __init__(self, w_x: Tensor, w_h: Tensor, b: Tensor, hidden: int):
        self.w_x = w_x
        self.w_h = w_h
        self.b = b
        self.hidden = hidden

    @classmethod
    def init(cls, rng, d: int, hidden: int) -> "LstmDirection":
        b = uniform_init(rng, d + hidden, (4 * hidden,))
        b[hidden : 2 * hidden] += 1.0  # forget-gate bias
        return cls(
            w_x=Tensor(uniform_init(rng, d + hidden, (d, 4 * hidden)), requires_grad=True),
            w_h=Tensor(uniform_init(rng, d + hidden, (hidden, 4 * hidden)), requires_grad=True),
            b=Tensor(b, requires_grad=True),
            hidden=hidden,
        )

    def run(self, rows: list[Tensor], batch: int) -> Tensor:
        """Final hidden state (B, h) after scanning rows in the given order."""
        h = Tensor(np.zeros((batch, self.hidden)))
        c = Tensor(np.zeros((batch, self.hidden)))
        nh = self.hidden
        for x in rows:
            pre = T.matmul(x, self.w_x) + T.matmul(h, self.w_h) + self.b
            i = T.sigmoid(pre[:, :nh])
            f = T.sigmoid(pre[:, nh : 2 * nh])
            g = T.tanh(pre[:, 2 * nh : 3 * nh])
            o = T.sigmoid(pre[:, 3 * nh :])
            c = f * c + i * g
            h = o * T.tanh(c)
        return h

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w_x", self.w_x), (f"{prefix}.w_h", self.w_h), (f"{prefix}.b", self.b)]


def column_moments(hist: Tensor) -> Tensor:
    """Per-column population moments of a (B, n, d) history block.

    Returns (B, 4d): means, stds, skews, excess kurtoses, grouped by
    moment. Columns with std below 1e-8 get std = skew = kurt = 0.
    """
    mu = hist.mean(axis=1, keepdims=True)  # (B, 1, d)
    xc = hist - mu
    m2 = (xc * xc).mean(axis=1)  # (B, d)
    m3 = (xc * xc * xc).mean(axis=1)
    m4 = (xc * xc * xc * xc).mean(axis=1)
    sigma = T.sqrt(m2 + _VAR_TINY)
    degenerate = sigma.data < _SIGMA_FLOOR
    safe = T.where(degenerate, Tensor(np.ones_like(sigma.data)), sigma)
    zero = Tensor(np.zeros_like(sigma.data))
    skew = T.where(degenerate, zero, m3 / T.power(safe, 3.0))
    kurt = T.where(degenerate, zero, m4 / T.power(safe, 4.0) - 3.0)
    sigma_out = T.where(degenerate, zero, sigma)
    return T.concat([mu.reshape(mu.shape[0], mu.shape[2]), sigma_out, skew, kurt], axis=-1)


@dataclass
class ConditionVector:
    h_temp: Tensor  # (B, 2h)
    h_stat: Tensor  # (B, d_model)
    h_trend: Tensor  # (B, d_model)
    h_fused: Tensor  # (B, d_model)


class ConditionEncoder:
    """Temporal + statistical + trend branches fused to one d_model vector."""

    def __init__(self, rng: np.random.Generator, d: int, hidden: int, d_model: int,
                 stat_hidden: int, trend_kernel: int = 3):
        self.d = d
        self.hidden = hidden
        self.d_model = d_model
        self.fwd = LstmDirection.init(rng, d, hidden)
        self.bwd = LstmDirection.init(rng, d, hidden)
        self.stat_mlp = Mlp.init(rng, 4 * d, stat_hidden, d_model)
        self.trend_kernel = Tensor(uniform_init(rng, trend_kernel, (trend_kernel, d)), requires_grad=True)
        self.trend_bias = Tensor(uniform_init(rng, trend_kernel, (d,)), requires_grad=True)
        self.trend_proj = Affine.init(rng, d, d_model)
        self.fusion = Affine.init(rng, 2 * hidden + 2 * d_model, d_model)

    def encode_temporal(self, hist: Tensor) -> Tensor:
        """BiLSTM over (B, n, d); concatenated final states of both passes."""
        batch, n, _ = hist.shape
        rows = [hist[:, t, :] for t in range(n)]
        h_f = self.fwd.run(rows, batch)
        h_b = self.bwd.run(rows[::-1], batch)
        return T.concat([h_f, h_b], axis=-1)

    def encode_statistical(self, hist: Tensor) -> Tensor:
        return self.stat_mlp(column_moments(hist))

    def encode_trend(self, hist: Tensor) -> Tensor:
        """Conv over first differences, mean-pooled over time, projected."""
        n = hist.shape[1]
        if n < 2:
            raise SizeError(f"trend branch needs history length >= 2, got {n}")
        diffs = hist[:, 1:, :] - hist[:, :-1, :]  # (B, n-1, d)
        conv = T.conv1d(diffs, self.trend_kernel, self.trend_bias)
        return self.trend_proj(conv.mean(axis=1))

    def fuse(self, h_temp: Tensor, h_stat: Tensor, h_trend: Tensor) -> Tensor:
        return T.tanh(self.fusion(T.concat([h_temp, h_stat, h_trend], axis=-1)))

    def __call__(self, hist: Tensor) -> ConditionVector:
        h_temp = self.encode_temporal(hist)
        h_stat = self.encode_statistical(hist)
        h_trend = self.encode_trend(hist)
        return ConditionVector(h_temp, h_stat, h_trend, self.fuse(h_temp, h_stat, h_trend))

    def params(self, prefix: str = "encoder") -> list[tuple[str, Tensor]]:
        out = self.fwd.params(f"{prefix}.lstm_fwd") + self.bwd.params(f"{prefix}.lstm_bwd")
        out += self.stat_mlp.params(f"{prefix}.stat")
        out += [(f"{prefix}.trend.kernel", self.trend_kernel), (f"{prefix}.trend.bias", self.trend_bias)]
        out += self.trend_proj.params(f"{prefix}.trend.proj")
        out += self.fusion.params(f"{prefix}.fusion")
        return out
