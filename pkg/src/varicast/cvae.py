"""Conditional VAE core: encoder, reparameterized sampling, residual
transformer blocks over latent tokens, and the conditional decoder.

The latent vector is reshaped into n_tok tokens of d_tok dims so the
per-block self-attention has something to attend over; each block
computes exactly

    z_l = z_{l-1} + MLP(LN(z_{l-1} + MSA(LN(z_{l-1}))))

with the outer residual springing from z_{l-1} itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import Affine, Mlp
from .tensor import Tensor

LOGVAR_CLAMP = 10.0


@dataclass
class LatentSample:
    mu: Tensor  # (B, m)
    log_var: Tensor  # (B, m)
    z0: Tensor  # (B, m)
    zL: Tensor  # (B, m)
    eps: np.ndarray  # (B, m) recorded standard-normal draws


class LatentBlock:
    """One pre-norm residual block (self-attention + MLP) on latent tokens."""

    def __init__(self, rng, d_tok: int, heads: int, mlp_hidden: int):
        if d_tok % heads != 0:
            raise ShapeError(f"latent token dim {d_tok} not divisible by heads {heads}")
        self.d_tok = d_tok
        self.heads = heads
        self.d_k = d_tok // heads
        self.attn = {m: Affine.init(rng, d_tok, d_tok) for m in ("q", "k", "v", "out")}
        self.mlp = Mlp.init(rng, d_tok, mlp_hidden, d_tok, act=T.softplus)
        self.ln1_gain = Tensor(np.ones(d_tok), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(d_tok), requires_grad=True)
        self.ln2_gain = Tensor(np.ones(d_tok), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(d_tok), requires_grad=True)

    def _msa(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        def split(t):
            return t.reshape(b, n, self.heads, self.d_k).transpose((0, 2, 1, 3))
        q, k, v = (split(self.attn[m](x)) for m in "qkv")
        scores = T.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_k))
        ctx = T.matmul(T.softmax(scores, axis=-1), v)
        merged = ctx.transpose((0, 2, 1, 3)).reshape(b, n, self.d_tok)
        return self.attn["out"](merged)

    def __call__(self, z: Tensor) -> Tensor:
        inner = z + self._msa(T.layer_norm(z, self.ln1_gain, self.ln1_bias))
        return z + self.mlp(T.layer_norm(inner, self.ln2_gain, self.ln2_bias))

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for m in ("q", "k", "v", "out"):
            out += self.attn[m].params(f"{prefix}.attn.{m}")
        out += self.mlp.params(f"{prefix}.mlp")
        out += [
            (f"{prefix}.ln1.gain", self.ln1_gain),
            (f"{prefix}.ln1.bias", self.ln1_bias),
            (f"{prefix}.ln2.gain", self.ln2_gain),
            (f"{prefix}.ln2.bias", self.ln2_bias),
        ]
        return out


class CvaeCore:
    """q(z | x, c) -> latent refinement -> p(x | z, c), all Gaussian."""

    def __init__(self, rng, d: int, c_dim: int, m: int, n_tok: int, layers: int,
                 enc_hidden: int, dec_hidden: int, resformer_heads: int = 2,
                 mlp_hidden: int | None = None):
        if m % n_tok != 0:
            raise ShapeError(f"latent dim {m} not divisible by n_tok {n_tok}")
        self.d = d
        self.c_dim = c_dim
        self.m = m
        self.n_tok = n_tok
        self.d_tok = m // n_tok
        self.enc_trunk = Affine.init(rng, d + c_dim, enc_hidden)
        self.enc_mu = Affine.init(rng, enc_hidden, m)
        self.enc_logvar = Affine.init(rng, enc_hidden, m)
        self.blocks = [
            LatentBlock(rng, self.d_tok, resformer_heads, mlp_hidden or 2 * self.d_tok)
            for _ in range(layers)
        ]
        self.dec_trunk = Affine.init(rng, m + c_dim, dec_hidden)
        self.dec_mu = Affine.init(rng, dec_hidden, d)
        self.dec_logvar = Affine.init(rng, dec_hidden, d)

    def encode(self, x_t: Tensor, c_t: Tensor) -> tuple[Tensor, Tensor]:
        h = T.softplus(self.enc_trunk(T.concat([x_t, c_t], axis=-1)))
        mu = self.enc_mu(h)
        log_var = T.clamp(self.enc_logvar(h), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, log_var

    @staticmethod
    def reparameterize(mu: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
        """z0 = mu + exp(log_var / 2) * eps; eps is a constant (no gradient)."""
        return mu + T.exp(log_var * 0.5) * Tensor(eps)

    def resformer_stack(self, z0: Tensor) -> Tensor:
        if not self.blocks:
            return z0
        b = z0.shape[0]
        z = z0.reshape(b, self.n_tok, self.d_tok)
        for block in self.blocks:
            z = block(z)
        return z.reshape(b, self.m)

    def decode(self, z: Tensor, c_t: Tensor) -> tuple[Tensor, Tensor]:
        h = T.softplus(self.dec_trunk(T.concat([z, c_t], axis=-1)))
        mu = self.dec_mu(h)
        log_var = T.clamp(self.dec_logvar(h), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, log_var

    def forward(self, x_t: Tensor, c_t: Tensor, eps: np.ndarray) -> tuple[LatentSample, Tensor, Tensor]:
        mu, log_var = self.encode(x_t, c_t)
        z0 = self.reparameterize(mu, log_var, eps)
        zL = self.resformer_stack(z0)
        mu_dec, log_var_dec = self.decode(zL, c_t)
        return LatentSample(mu, log_var, z0, zL, eps), mu_dec, log_var_dec

    def sample_prior(self, c_t: Tensor, rng: np.random.Generator, draw: bool = False):
        """Generate from z ~ N(0, I); returns the decoder mean (or a draw)."""
        b = c_t.shape[0]
        z0 = Tensor(rng.standard_normal((b, self.m)))
        zL = self.resformer_stack(z0)
        mu_dec, log_var_dec = self.decode(zL, c_t)
        if draw:
            return mu_dec + T.exp(log_var_dec * 0.5) * Tensor(rng.standard_normal((b, self.d)))
        return mu_dec

    def params(self, prefix: str = "cvae") -> list[tuple[str, Tensor]]:
        out = self.enc_trunk.params(f"{prefix}.enc.trunk")
        out += self.enc_mu.params(f"{prefix}.enc.mu")
        out += self.enc_logvar.params(f"{prefix}.enc.logvar")
        for i, block in enumerate(self.blocks):
            out += block.params(f"{prefix}.block{i}")
        out += self.dec_trunk.params(f"{prefix}.dec.trunk")
        out += self.dec_mu.params(f"{prefix}.dec.mu")
        out += self.dec_logvar.params(f"{prefix}.dec.logvar")
        return out
