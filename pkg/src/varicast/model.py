"""Full model assembly: condition encoding, multi-scale attention,
latent CVAE, task heads, and the per-batch loss computation.

The conditioning vector c_t concatenates the fused condition encoding,
the attention summary (when enabled), and the adaptively pooled history
features (when enabled). Batches are chronologically contiguous windows
so the latent-smoothness term can read consecutive pairs straight from
the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import tensor as T
from .attention import AttentionOutput, MultiScaleAttention
from .cvae import CvaeCore, LatentSample
from .encoder import ConditionEncoder, ConditionVector
from .errors import ConfigError
from .layers import Affine
from .tensor import Tensor


@dataclass
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    h_lstm: int = 32
    stat_hidden: int = 32
    trend_kernel: int = 3
    latent: int = 16
    n_tok: int = 4
    resformer_layers: int = 2
    resformer_heads: int = 2
    enc_hidden: int = 64
    dec_hidden: int = 64
    head_hidden: int = 32
    imp_hidden: int = 16
    use_hier_attn: bool = True
    use_resformer: bool = True
    use_adaptive_history: bool = True
    attn_reg_sign: str = "diversity"
    mask_mode: str = "additive"

    def validate(self) -> None:
        for name in ("d_model", "heads", "h_lstm", "stat_hidden", "latent", "n_tok",
                     "resformer_heads", "enc_hidden", "dec_hidden", "head_hidden",
                     "imp_hidden", "trend_kernel"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.resformer_layers < 0:
            raise ConfigError("model.resformer_layers must be >= 0")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.latent % self.n_tok != 0:
            raise ConfigError(f"latent {self.latent} not divisible by n_tok {self.n_tok}")
        if (self.latent // self.n_tok) % self.resformer_heads != 0:
            raise ConfigError("latent token dim not divisible by resformer_heads")
        if self.attn_reg_sign not in ("diversity", "literal"):
            raise ConfigError(f"unknown attn_reg_sign {self.attn_reg_sign!r}")
        if self.mask_mode not in ("additive", "multiplicative"):
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}")


@dataclass
class ForwardState:
    condition: ConditionVector
    attn: AttentionOutput | None
    h_adaptive: Tensor | None
    adaptive_weights: Tensor | None
    c_t: Tensor
    latent: LatentSample
    mu_dec: Tensor
    log_var_dec: Tensor
    x_hat: Tensor
    sigma_pred: Tensor


class ForecastModel:
    """All trainable parameters plus the forward pass wiring them together."""

    def __init__(self, cfg: ModelConfig, d: int, seed: int = 0):
        cfg.validate()
        if d <= 0:
            raise ConfigError("model needs at least one input column")
        self.cfg = cfg
        self.d = d
        rng = np.random.default_rng(seed)
        self.encoder = ConditionEncoder(
            rng, d=d, hidden=cfg.h_lstm, d_model=cfg.d_model,
            stat_hidden=cfg.stat_hidden, trend_kernel=cfg.trend_kernel,
        )
        self.attention = (
            MultiScaleAttention(rng, d=d, d_model=cfg.d_model, heads=cfg.heads,
                                mask_mode=cfg.mask_mode)
            if cfg.use_hier_attn else None
        )
        # adaptive pooling reads the attention token embeddings; with the
        # attention branch ablated it gets its own embedding
        self.hist_embed = (
            Affine.init(rng, d, cfg.d_model)
            if (cfg.use_adaptive_history and not cfg.use_hier_attn) else None
        )
        c_dim = cfg.d_model * (1 + int(cfg.use_hier_attn) + int(cfg.use_adaptive_history))
        self.c_dim = c_dim
        layers = cfg.resformer_layers if cfg.use_resformer else 0
        self.cvae = CvaeCore(
            rng, d=d, c_dim=c_dim, m=cfg.latent, n_tok=cfg.n_tok, layers=layers,
            enc_hidden=cfg.enc_hidden, dec_hidden=cfg.dec_hidden,
            resformer_heads=cfg.resformer_heads,
        )
        self.heads = L.TaskHeads(rng, m=cfg.latent, d=d,
                                 head_hidden=cfg.head_hidden, imp_hidden=cfg.imp_hidden)

    def condition(self, hist: Tensor, x_t: Tensor):
        """Build c_t for a batch; returns intermediates for loss/diagnostics."""
        cv = self.encoder(hist)
        parts = [cv.h_fused]
        attn_out = None
        if self.attention is not None:
            attn_out = self.attention(hist, x_t, cv.h_fused)
            parts.append(attn_out.h_attn)
        h_adaptive = None
        weights = None
        if self.cfg.use_adaptive_history:
            if self.attention is not None:
                feats = self.attention.embed_tokens(hist)
            else:
                feats = self.hist_embed(hist)
            h_adaptive, weights = self.heads.adaptive_history(x_t, hist, feats)
            parts.append(h_adaptive)
        c_t = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
        return cv, attn_out, h_adaptive, weights, c_t

    def forward(self, hist: Tensor, x_t: Tensor, eps: np.ndarray) -> ForwardState:
        cv, attn_out, h_adaptive, weights, c_t = self.condition(hist, x_t)
        latent, mu_dec, log_var_dec = self.cvae.forward(x_t, c_t, eps)
        x_hat = self.heads.predict(latent.zL)
        sigma_pred = self.heads.uncertainty(latent.zL)
        return ForwardState(
            condition=cv, attn=attn_out, h_adaptive=h_adaptive,
            adaptive_weights=weights, c_t=c_t, latent=latent,
            mu_dec=mu_dec, log_var_dec=log_var_dec,
            x_hat=x_hat, sigma_pred=sigma_pred,
        )

    def params(self) -> list[tuple[str, Tensor]]:
        out = self.encoder.params("encoder")
        if self.attention is not None:
            out += self.attention.params("attention")
        if self.hist_embed is not None:
            out += self.hist_embed.params("hist_embed")
        out += self.cvae.params("cvae")
        out += self.heads.params("heads")
        return out

    def param_dict(self) -> dict[str, Tensor]:
        d = dict(self.params())
        if len(d) != len(self.params()):
            raise ConfigError("duplicate parameter names")
        return d

    def zero_grad(self) -> None:
        for _, p in self.params():
            p.zero_grad()


def compute_losses(model: ForecastModel, weights: L.LossWeights,
                   hist: np.ndarray, x_t: np.ndarray, x_next: np.ndarray,
                   eps: np.ndarray, beta: float) -> tuple[L.LossBreakdown, ForwardState]:
    """One batched forward pass and the full weighted objective."""
    hist_t, xt_t, xn_t = Tensor(hist), Tensor(x_t), Tensor(x_next)
    state = model.forward(hist_t, xt_t, eps)
    nll, kl = L.recon_loss(xt_t, state.mu_dec, state.log_var_dec,
                           state.latent.mu, state.latent.log_var)
    mse = L.pred_loss(xn_t, state.x_hat)
    robust = L.robust_loss(xn_t, state.x_hat, state.sigma_pred)
    smooth = model.heads.smooth_loss(state.latent.zL, xt_t)
    entropy = L.attn_entropy(state.attn.attention_maps) if state.attn is not None else None
    breakdown = L.total_loss(nll, kl, mse, robust, smooth, entropy, weights, beta,
                             attn_reg_sign=model.cfg.attn_reg_sign)
    return breakdown, state


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)


def model_grad_check(model: ForecastModel, weights: L.LossWeights,
                     hist: np.ndarray, x_t: np.ndarray, x_next: np.ndarray,
                     eps: np.ndarray, beta: float = 1.0, fd_eps: float = 1e-5,
                     module: str | None = None) -> GradCheckReport:
    """Full-model gradient check against central finite differences.

    One analytic backward pass supplies all gradients; each parameter is
    then probed coordinate-by-coordinate. `module` restricts the probe
    to parameters whose name starts with that prefix.
    """
    named = model.params() + weights.params()
    if module:
        named = [(n, p) for n, p in named if n.startswith(module)]
        if not named:
            raise ConfigError(f"no parameters match module prefix {module!r}")

    model.zero_grad()
    for _, p in weights.params():
        p.zero_grad()
    with T.Tape() as tape:
        breakdown, _ = compute_losses(model, weights, hist, x_t, x_next, eps, beta)
        tape.backward(breakdown.total_tensor)

    def loss_value() -> float:
        bd, _ = compute_losses(model, weights, hist, x_t, x_next, eps, beta)
        return bd.total

    per_param: dict[str, float] = {}
    for name, p in named:
        numeric = T.finite_difference_grads(loss_value, [p], eps=fd_eps)[0]
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        per_param[name] = float(err.max()) if err.size else 0.0
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_error=worst, per_param=per_param)
