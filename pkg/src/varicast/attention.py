"""Local, global, and cross attention over embedded history tokens.

The local scale adds a learnable distance penalty to the scores before
softmax (log-domain), which is equivalent to multiplying the softmax
numerators by exp(-penalty); a literal multiplicative mask on the raw
scores is available via mask_mode="multiplicative".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import Affine
from .tensor import Tensor


def softplus_inv(y: float) -> float:
    """Raw value r with softplus(r) = y."""
    return float(np.log(np.expm1(y)))


def row_entropy(rows: np.ndarray) -> float:
    """Mean Shannon entropy of the trailing-axis distributions (0 log 0 = 0)."""
    p = np.asarray(rows, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(p > 0.0, -p * np.log(p), 0.0)
    return float(h.sum(axis=-1).mean())


@dataclass
class AttentionOutput:
    h_attn: Tensor  # (B, d_model)
    alphas: Tensor  # (B, 3) simplex weights over scales
    row_entropies: dict[str, float]
    attention_maps: dict[str, Tensor]


class MultiScaleAttention:
    """Three attention scales fused by an input-conditioned gate."""

    def __init__(self, rng: np.random.Generator, d: int, d_model: int, heads: int,
                 mask_mode: str = "additive"):
        if d_model % heads != 0:
            raise ShapeError(f"d_model {d_model} not divisible by heads {heads}")
        if mask_mode not in ("additive", "multiplicative"):
            raise ConfigError(f"unknown mask_mode {mask_mode!r}")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.mask_mode = mask_mode
        self.token_embed = Affine.init(rng, d, d_model)
        self.proj = {
            scale: {name: Affine.init(rng, d_model, d_model) for name in names}
            for scale, names in (("local", "qkv"), ("global", "qkv"), ("cross", "kv"))
        }
        self.cross_query_proj = Affine.init(rng, d_model, d_model)
        # softplus keeps bandwidth and slope positive; the bandwidth init is
        # deliberately non-integer so it never sits on the |i-j| - b kink
        self.local_bandwidth_raw = Tensor(np.full(heads, softplus_inv(1.8)), requires_grad=True)
        self.local_slope_raw = Tensor(np.full(heads, softplus_inv(1.0)), requires_grad=True)
        self.gate = Affine.init(rng, d + d_model, 3)
        self.output_proj = Affine.init(rng, d_model, d_model)

    # ---- helpers ----------------------------------------------------------

    def embed_tokens(self, rows: Tensor) -> Tensor:
        """Affine embedding applied per history row: (B, n, d) -> (B, n, d_model)."""
        return self.token_embed(rows)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d_k).transpose((0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, h, n, dk = x.shape
        return x.transpose((0, 2, 1, 3)).reshape(b, n, h * dk)

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, penalty: Tensor | None):
        """Scaled dot-product attention; penalty (H, nq, nk) is optional."""
        scores = T.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_k))
        if penalty is not None:
            if self.mask_mode == "additive":
                scores = scores - penalty
            else:
                scores = scores * T.exp(-penalty)
        attn = T.softmax(scores, axis=-1)
        return T.matmul(attn, v), attn

    def _local_penalty(self, n: int) -> Tensor:
        dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(np.float64)
        b = T.softplus(self.local_bandwidth_raw).reshape(self.heads, 1, 1)
        s = T.softplus(self.local_slope_raw).reshape(self.heads, 1, 1)
        return s * T.relu(Tensor(dist) - b)

    # ---- the three scales -------------------------------------------------

    def local_attention(self, tokens: Tensor):
        p = self.proj["local"]
        q, k, v = (self._split_heads(p[m](tokens)) for m in "qkv")
        ctx, attn = self._attend(q, k, v, self._local_penalty(tokens.shape[1]))
        return self._merge_heads(ctx), attn

    def global_attention(self, tokens: Tensor):
        p = self.proj["global"]
        q, k, v = (self._split_heads(p[m](tokens)) for m in "qkv")
        ctx, attn = self._attend(q, k, v, None)
        return self._merge_heads(ctx), attn

    def cross_attention(self, current_embed: Tensor, hist_tokens: Tensor):
        """One query from the current state over historical keys/values."""
        b = current_embed.shape[0]
        q = self._split_heads(self.cross_query_proj(current_embed).reshape(b, 1, self.d_model))
        k = self._split_heads(self.proj["cross"]["k"](hist_tokens))
        v = self._split_heads(self.proj["cross"]["v"](hist_tokens))
        ctx, attn = self._attend(q, k, v, None)
        return self._merge_heads(ctx).reshape(b, self.d_model), attn

    # ---- fusion ------------------------------------------------------------

    def fuse_scales(self, local_ctx: Tensor, global_ctx: Tensor, cross_ctx: Tensor,
                    x_t: Tensor, h_fused: Tensor, maps: dict[str, Tensor]) -> AttentionOutput:
        pooled_local = local_ctx.mean(axis=1)
        pooled_global = global_ctx.mean(axis=1)
        alphas = T.softmax(self.gate(T.concat([x_t, h_fused], axis=-1)), axis=-1)
        mix = (
            alphas[:, 0:1] * pooled_local
            + alphas[:, 1:2] * pooled_global
            + alphas[:, 2:3] * cross_ctx
        )
        h_attn = self.output_proj(mix)
        entropies = {name: row_entropy(m.data) for name, m in maps.items()}
        return AttentionOutput(h_attn=h_attn, alphas=alphas, row_entropies=entropies,
                               attention_maps=maps)

    def __call__(self, hist: Tensor, x_t: Tensor, h_fused: Tensor) -> AttentionOutput:
        tokens = self.embed_tokens(hist)
        current = self.embed_tokens(x_t)
        local_ctx, a_local = self.local_attention(tokens)
        global_ctx, a_global = self.global_attention(tokens)
        cross_ctx, a_cross = self.cross_attention(current, tokens)
        maps = {"local": a_local, "global": a_global, "cross": a_cross}
        return self.fuse_scales(local_ctx, global_ctx, cross_ctx, x_t, h_fused, maps)

    def params(self, prefix: str = "attention") -> list[tuple[str, Tensor]]:
        out = self.token_embed.params(f"{prefix}.token_embed")
        for scale in ("local", "global", "cross"):
            for name, aff in self.proj[scale].items():
                out += aff.params(f"{prefix}.{scale}.{name}")
        out += self.cross_query_proj.params(f"{prefix}.cross.q")
        out += [
            (f"{prefix}.local.bandwidth_raw", self.local_bandwidth_raw),
            (f"{prefix}.local.slope_raw", self.local_slope_raw),
        ]
        out += self.gate.params(f"{prefix}.gate")
        out += self.output_proj.params(f"{prefix}.output_proj")
        return out
