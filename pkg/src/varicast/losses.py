"""Prediction/uncertainty heads, the five loss terms, and their weighting.

Sign conventions: everything is phrased for minimization, so the
reconstruction term is the negative ELBO (NLL + beta * KL). The
attention-entropy regularizer is subtracted by default so that
minimizing the total *increases* attention diversity; the literal
added-entropy variant stays available via attn_reg_sign="literal".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import softplus_inv
from .errors import ConfigError, ContractError, NumericError
from .layers import Mlp
from .tensor import Tensor

_LAMBDA_FLOOR = 1e-4
_SIGMA_PRED_FLOOR = 1e-6

LAMBDA_NAMES = ("pred", "robust", "smooth", "attn")


class TaskHeads:
    """Prediction + uncertainty heads, the smoothness gate, and f_imp."""

    def __init__(self, rng, m: int, d: int, head_hidden: int, imp_hidden: int):
        self.pred_head = Mlp.init(rng, m, head_hidden, d, act=T.softplus)
        self.unc_head = Mlp.init(rng, m, head_hidden, d, act=T.softplus)
        self.smooth_w = Tensor(rng.normal(scale=0.1, size=(d, d)), requires_grad=True)
        self.smooth_b = Tensor(np.zeros(()), requires_grad=True)
        self.imp_mlp = Mlp.init(rng, 2 * d, imp_hidden, 1, act=T.tanh)

    def predict(self, z: Tensor) -> Tensor:
        return self.pred_head(z)

    def uncertainty(self, z: Tensor) -> Tensor:
        """Strictly positive per-dimension sigma for the next-step prediction."""
        return T.softplus(self.unc_head(z)) + _SIGMA_PRED_FLOOR

    def params(self, prefix: str = "heads") -> list[tuple[str, Tensor]]:
        out = self.pred_head.params(f"{prefix}.pred")
        out += self.unc_head.params(f"{prefix}.unc")
        out += [(f"{prefix}.smooth.w", self.smooth_w), (f"{prefix}.smooth.b", self.smooth_b)]
        out += self.imp_mlp.params(f"{prefix}.imp")
        return out

    # ---- per-term losses ---------------------------------------------------

    def smooth_loss(self, z_seq: Tensor, x_seq: Tensor) -> Tensor:
        """sum over consecutive pairs of beta_t ||z_t - z_{t-1}||^2.

        z_seq: (T, m) latents of chronologically consecutive windows;
        x_seq: (T, d) the matching current observations. T < 2 gives 0.
        """
        if z_seq.shape[0] < 2:
            return Tensor(0.0)
        dz = z_seq[1:, :] - z_seq[:-1, :]
        sq = (dz * dz).sum(axis=-1)  # (T-1,)
        bilinear = (T.matmul(x_seq[1:, :], self.smooth_w) * x_seq[:-1, :]).sum(axis=-1)
        beta_t = T.sigmoid(bilinear + self.smooth_b)
        return (beta_t * sq).sum()

    def adaptive_history(self, x_t: Tensor, hist: Tensor, hist_feats: Tensor):
        """Importance-weighted pooling of history features.

        x_t: (B, d), hist: (B, n, d), hist_feats: (B, n, d_model).
        Returns (h_adaptive (B, d_model), weights (B, n)).
        """
        b, n, d = hist.shape
        x_rep = x_t.reshape(b, 1, d) * Tensor(np.ones((1, n, 1)))
        pairs = T.concat([x_rep, hist], axis=-1)  # (B, n, 2d)
        logits = self.imp_mlp(pairs).reshape(b, n)
        weights = T.softmax(logits, axis=-1)
        pooled = (weights.reshape(b, n, 1) * hist_feats).sum(axis=1)
        return pooled, weights


def recon_loss(x_t: Tensor, mu_dec: Tensor, log_var_dec: Tensor,
               mu: Tensor, log_var: Tensor) -> tuple[Tensor, Tensor]:
    """Gaussian NLL of x_t under the decoder, and KL(q || N(0, I)).

    Both are summed over dimensions and averaged over the batch; the
    reconstruction term of the objective is nll + beta * kl.
    """
    var = T.exp(log_var_dec)
    nll_per = 0.5 * (np.log(2.0 * np.pi) + log_var_dec + (x_t - mu_dec) * (x_t - mu_dec) / var)
    nll = nll_per.sum(axis=-1).mean()
    kl_per = 0.5 * (mu * mu + T.exp(log_var) - 1.0 - log_var)
    kl = kl_per.sum(axis=-1).mean()
    return nll, kl


def pred_loss(x_next: Tensor, x_hat: Tensor) -> Tensor:
    """Squared L2 error of the next-step prediction, batch-averaged."""
    err = x_next - x_hat
    return (err * err).sum(axis=-1).mean()


def robust_loss(x_next: Tensor, x_hat: Tensor, sigma_pred: Tensor) -> Tensor:
    """Confidence-weighted error: err^2 / (2 sigma^2) + 0.5 log sigma^2."""
    if np.any(sigma_pred.data <= 0.0):
        raise ContractError("robust_loss requires strictly positive sigma")
    err = x_next - x_hat
    var = sigma_pred * sigma_pred
    per = err * err / (2.0 * var) + 0.5 * T.log(var)
    return per.sum(axis=-1).mean()


def attn_entropy(attention_maps: dict[str, Tensor]) -> Tensor:
    """Mean attention-row entropy across scales (0 log 0 := 0)."""
    per_scale = []
    for name, a in attention_maps.items():
        rows = a.data.reshape(-1, a.shape[-1])
        if np.any(np.abs(rows.sum(axis=-1) - 1.0) > 1e-4):
            raise ContractError(f"attention map {name!r} rows do not sum to 1")
        positive = a.data > 0.0
        safe = T.where(positive, a, Tensor(np.ones_like(a.data)))
        ent = T.where(positive, a * T.log(safe), Tensor(np.zeros_like(a.data)))
        n_rows = rows.shape[0]
        per_scale.append(-ent.sum() / float(n_rows))
    total = per_scale[0]
    for term in per_scale[1:]:
        total = total + term
    return total / float(len(per_scale))


class LossWeights:
    """The lambda multipliers: fixed floats or softplus-mapped trainables.

    In learnable mode each lambda is 1e-4 + softplus(raw), which keeps a
    floor under the auxiliary losses so they cannot be zeroed out.
    """

    def __init__(self, inits: dict[str, float], learnable: bool = False):
        self.learnable = learnable
        self._fixed: dict[str, float] = {}
        self._raw: dict[str, Tensor] = {}
        for name in LAMBDA_NAMES:
            init = float(inits.get(name, 1.0))
            if learnable:
                if init <= _LAMBDA_FLOOR:
                    raise ConfigError(f"learnable lambda_{name} init must exceed {_LAMBDA_FLOOR}")
                self._raw[name] = Tensor(softplus_inv(init - _LAMBDA_FLOOR), requires_grad=True)
            else:
                if init < 0.0:
                    raise ConfigError(f"lambda_{name} must be >= 0, got {init}")
                self._fixed[name] = init

    def value(self, name: str):
        if self.learnable:
            return T.softplus(self._raw[name]) + _LAMBDA_FLOOR
        return self._fixed[name]

    def current(self, name: str) -> float:
        v = self.value(name)
        return v.item() if isinstance(v, Tensor) else v

    def params(self, prefix: str = "lambda") -> list[tuple[str, Tensor]]:
        if not self.learnable:
            return []
        return [(f"{prefix}.{name}", self._raw[name]) for name in LAMBDA_NAMES]


def beta_schedule(step: int, beta_max: float, warmup: int) -> float:
    """Linear KL warmup 0 -> beta_max over the first `warmup` steps."""
    if warmup <= 0:
        return beta_max
    return beta_max * min(1.0, step / warmup)


@dataclass
class LossBreakdown:
    recon_nll: float
    kl: float
    pred_mse: float
    robust: float
    smooth: float
    attn_entropy_term: float | None
    total: float
    beta: float
    lambdas: dict[str, float] = field(default_factory=dict)
    total_tensor: Tensor | None = None

    def columns(self) -> dict[str, float]:
        out = {
            "recon_nll": self.recon_nll,
            "kl": self.kl,
            "pred_mse": self.pred_mse,
            "robust": self.robust,
            "smooth": self.smooth,
        }
        if self.attn_entropy_term is not None:
            out["attn_entropy"] = self.attn_entropy_term
        out["total"] = self.total
        for name, v in self.lambdas.items():
            out[f"lambda_{name}"] = v
        out["beta"] = self.beta
        return out


def total_loss(nll: Tensor, kl: Tensor, pred: Tensor, robust: Tensor, smooth: Tensor,
               entropy: Tensor | None, weights: LossWeights, beta: float,
               attn_reg_sign: str = "diversity") -> LossBreakdown:
    """Weighted sum of all active terms, with the breakdown recorded."""
    named = {"recon_nll": nll, "kl": kl, "pred": pred, "robust": robust, "smooth": smooth}
    if entropy is not None:
        named["attn_entropy"] = entropy
    for name, t in named.items():
        if not np.isfinite(t.data).all():
            raise NumericError(f"loss term {name!r} is not finite")

    total = nll + beta * kl
    total = total + weights.value("pred") * pred
    total = total + weights.value("robust") * robust
    total = total + weights.value("smooth") * smooth
    if entropy is not None:
        if attn_reg_sign == "diversity":
            total = total - weights.value("attn") * entropy
        elif attn_reg_sign == "literal":
            total = total + weights.value("attn") * entropy
        else:
            raise ConfigError(f"unknown attn_reg_sign {attn_reg_sign!r}")

    lambdas = {name: weights.current(name) for name in LAMBDA_NAMES}
    if entropy is None:
        lambdas.pop("attn")
    return LossBreakdown(
        recon_nll=nll.item(),
        kl=kl.item(),
        pred_mse=pred.item(),
        robust=robust.item(),
        smooth=smooth.item(),
        attn_entropy_term=entropy.item() if entropy is not None else None,
        total=total.item(),
        beta=beta,
        lambdas=lambdas,
        total_tensor=total,
    )
