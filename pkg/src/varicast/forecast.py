"""Single- and multi-step forecasting with uncertainty accumulation.

Rollouts work in normalized space and denormalize once at the end, so
the Pythagorean accumulation sigma_k = sqrt(sigma_{k-1}^2 + u_k^2)
stays exact after scaling. The rolling window feeds predicted means
back by default; known future covariates can be substituted so only
predicted target columns are fed back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplits, Normalizer
from .errors import ContractError
from .model import ForecastModel
from .tensor import Tensor


@dataclass
class ForecastResult:
    horizon: int
    means: np.ndarray  # (K, d) denormalized predictive means
    sigmas: np.ndarray  # (K, d) accumulated uncertainty, denormalized
    per_step_unc: np.ndarray  # (K, d) per-step head outputs, denormalized
    context_meta: dict = field(default_factory=dict)


def _eps_for(model: ForecastModel, mode: str, rng: np.random.Generator | None, b: int = 1):
    if mode == "mean-latent":
        return np.zeros((b, model.cfg.latent))
    if mode == "sampled":
        if rng is None:
            raise ContractError("sampled mode needs a seeded generator")
        return rng.standard_normal((b, model.cfg.latent))
    raise ContractError(f"unknown forecast mode {mode!r}")


class Forecaster:
    """Wraps a trained model with the normalization needed for real units."""

    def __init__(self, model: ForecastModel, normalizer: Normalizer, target_idx: list[int]):
        self.model = model
        self.normalizer = normalizer
        self.target_idx = list(target_idx)

    def _step(self, hist: np.ndarray, x_t: np.ndarray, eps: np.ndarray):
        state = self.model.forward(Tensor(hist[None]), Tensor(x_t[None]), eps)
        return state.x_hat.data[0], state.sigma_pred.data[0]

    def forecast_one(self, hist: np.ndarray, x_t: np.ndarray, mode: str = "mean-latent",
                     rng: np.random.Generator | None = None):
        """Denormalized next-step mean and sigma for one normalized window."""
        x_hat, sigma = self._step(hist, x_t, _eps_for(self.model, mode, rng))
        return self.normalizer.inverse(x_hat), sigma * self.normalizer.std

    def forecast_multi(self, hist: np.ndarray, x_t: np.ndarray, horizon: int,
                       mode: str = "mean-latent", rng: np.random.Generator | None = None,
                       future_rows: np.ndarray | None = None,
                       meta: dict | None = None) -> ForecastResult:
        """Autoregressive rollout with accumulated uncertainty.

        future_rows: optional (horizon, d) of true normalized rows; when
        given, their covariate columns replace the fed-back predictions
        (predicted target columns still feed back).
        """
        if horizon < 1:
            raise ContractError(f"horizon must be >= 1, got {horizon}")
        if future_rows is not None and len(future_rows) < horizon:
            raise ContractError("future_rows shorter than the horizon")

        d = x_t.shape[-1]
        means = np.empty((horizon, d))
        per_step = np.empty((horizon, d))
        sigmas = np.empty((horizon, d))
        var_acc = np.zeros(d)
        window = hist.copy()
        current = x_t.copy()
        for k in range(horizon):
            x_hat, unc = self._step(window, current, _eps_for(self.model, mode, rng))
            means[k] = x_hat
            per_step[k] = unc
            var_acc = var_acc + unc**2
            sigmas[k] = np.sqrt(var_acc)
            window = np.vstack([window[1:], current[None]])
            if future_rows is not None:
                nxt = future_rows[k].copy()
                nxt[self.target_idx] = x_hat[self.target_idx]
            else:
                nxt = x_hat
            current = nxt

        std = self.normalizer.std
        return ForecastResult(
            horizon=horizon,
            means=self.normalizer.inverse(means),
            sigmas=sigmas * std,
            per_step_unc=per_step * std,
            context_meta=dict(meta or {}),
        )


@dataclass
class SplitEvaluation:
    """Aligned next-step truths and forecasts for one split, in real units."""

    split: str
    t_index: np.ndarray  # (N,) table row of each window's x_t
    timestamps: list[str]  # timestamps of the predicted rows (x_{t+1})
    y_true: np.ndarray  # (N, d)
    means: np.ndarray  # (N, d)
    sigmas: np.ndarray  # (N, d)


def evaluate_split(model: ForecastModel, splits: DatasetSplits, split_name: str,
                   mode: str = "mean-latent", seed: int = 0,
                   chunk: int = 256) -> SplitEvaluation:
    """Next-step forecasts for every window of a split.

    Sampled-mode draws come from per-window streams seeded by
    (seed, window index), so evaluation order cannot change them.
    """
    ds = splits.split(split_name)
    if len(ds) == 0:
        raise ContractError(f"split {split_name!r} has no windows")
    raw = splits.table.values()
    means = np.empty_like(ds.x_t)
    sigmas = np.empty_like(ds.x_t)
    for lo in range(0, len(ds), chunk):
        hi = min(lo + chunk, len(ds))
        if mode == "mean-latent":
            eps = np.zeros((hi - lo, model.cfg.latent))
        else:
            eps = np.stack([
                np.random.default_rng(np.random.SeedSequence([seed, int(ds.t_index[i])]))
                .standard_normal(model.cfg.latent)
                for i in range(lo, hi)
            ])
        state = model.forward(Tensor(ds.hist[lo:hi]), Tensor(ds.x_t[lo:hi]), eps)
        means[lo:hi] = state.x_hat.data
        sigmas[lo:hi] = state.sigma_pred.data
    return SplitEvaluation(
        split=split_name,
        t_index=ds.t_index,
        timestamps=[splits.table.timestamps[t + 1] for t in ds.t_index],
        y_true=raw[ds.t_index + 1],
        means=splits.normalizer.inverse(means),
        sigmas=sigmas * splits.normalizer.std,
    )


def write_forecast_csv(path, result: ForecastResult, origin_timestamp: str,
                       value_names: list[str], target_idx: list[int]) -> None:
    """(origin_timestamp, horizon_step, target_name, mean, sigma, lo95, hi95) rows."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin_timestamp", "horizon_step", "target_name", "mean", "sigma", "lo95", "hi95"])
        for k in range(result.horizon):
            for j in target_idx:
                mean = result.means[k, j]
                sigma = result.sigmas[k, j]
                w.writerow([
                    origin_timestamp, k + 1, value_names[j],
                    repr(float(mean)), repr(float(sigma)),
                    repr(float(mean - 1.96 * sigma)), repr(float(mean + 1.96 * sigma)),
                ])


def write_plot_csv(path, result: ForecastResult, target_j: int) -> None:
    """Plot-ready (horizon, mean, lo95, hi95) for one target column."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "mean", "lo95", "hi95"])
        for k in range(result.horizon):
            mean = result.means[k, target_j]
            sigma = result.sigmas[k, target_j]
            w.writerow([k + 1, repr(float(mean)),
                        repr(float(mean - 1.96 * sigma)), repr(float(mean + 1.96 * sigma))])
