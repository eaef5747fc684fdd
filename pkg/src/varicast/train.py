"""Deterministic training loop with CSV logging and checkpointing.

Batches are contiguous chronological slices of the train windows (the
smoothness term reads consecutive pairs straight out of the batch), and
all stochasticity flows from streams derived from (seed, step), so a
given config always produces bitwise-identical logs and checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses as L
from .checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_dataset, parse_config
from .data import DatasetSplits
from .errors import NumericError, SizeError
from .forecast import Forecaster
from .model import ForecastModel, compute_losses
from .optim import Adam
from .tensor import Tape, Tensor

LOG_NAME = "training_log.csv"
CHECKPOINT_NAME = "checkpoint.bin"


def batch_bounds(n_windows: int, batch: int, step: int) -> tuple[int, int]:
    """Contiguous chronological batch for a given step, cycling by epoch."""
    if n_windows <= batch:
        return 0, n_windows
    steps_per_epoch = n_windows // batch
    i = step % steps_per_epoch
    return i * batch, i * batch + batch


def train_eps(seed: int, step: int, rows: int, latent: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, step]))
    return rng.standard_normal((rows, latent))


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    steps: int
    rows: list[dict]


def _gather_arrays(named, opt: Adam) -> list[tuple[str, np.ndarray]]:
    arrays = [(name, p.data) for name, p in named]
    arrays += [(f"adam.m.{name}", opt.m[name]) for name, _ in named]
    arrays += [(f"adam.v.{name}", opt.v[name]) for name, _ in named]
    arrays.append(("adam.t", np.asarray(float(opt.t))))
    return arrays


def train(cfg: RunConfig) -> TrainResult:
    cfg.validate()
    splits = load_dataset(cfg)
    if len(splits.train) < 2:
        raise SizeError(f"train split has {len(splits.train)} windows; need at least 2")
    model = ForecastModel(cfg.model, d=splits.d, seed=cfg.train.seed)
    weights = L.LossWeights(cfg.loss.inits(), learnable=cfg.loss.learnable)
    named = model.params() + weights.params()
    opt = Adam(named, lr=cfg.train.lr, clip_norm=cfg.train.clip_norm)

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    config_text = dump_config(cfg)
    log_path = outdir / LOG_NAME
    ckpt_path = outdir / CHECKPOINT_NAME

    ds = splits.train
    rows: list[dict] = []
    log_fh = open(log_path, "w", newline="")
    writer: csv.DictWriter | None = None
    try:
        for step in range(cfg.train.steps):
            lo, hi = batch_bounds(len(ds), cfg.train.batch, step)
            eps = train_eps(cfg.train.seed, step, hi - lo, cfg.model.latent)
            beta = L.beta_schedule(step, cfg.loss.beta_max, cfg.loss.warmup)
            opt.zero_grad()
            try:
                with Tape() as tape:
                    bd, _ = compute_losses(
                        model, weights, ds.hist[lo:hi], ds.x_t[lo:hi], ds.x_next[lo:hi],
                        eps, beta,
                    )
                    tape.backward(bd.total_tensor)
                grad_norm = opt.step()
            except NumericError:
                save_checkpoint(outdir / "checkpoint.aborted.bin", config_text, step,
                                _gather_arrays(named, opt))
                (outdir / "aborted_batch.txt").write_text(
                    f"step {step}: train windows [{lo}, {hi})\n"
                )
                raise

            row = {"step": step, **bd.columns(), "grad_norm": grad_norm}
            rows.append(row)
            if writer is None:
                writer = csv.DictWriter(log_fh, fieldnames=list(row.keys()))
                writer.writeheader()
            writer.writerow(row)

            if cfg.train.checkpoint_every and (step + 1) % cfg.train.checkpoint_every == 0:
                save_checkpoint(ckpt_path, config_text, step + 1, _gather_arrays(named, opt))
    finally:
        log_fh.close()

    save_checkpoint(ckpt_path, config_text, cfg.train.steps, _gather_arrays(named, opt))
    return TrainResult(checkpoint_path=ckpt_path, log_path=log_path,
                       steps=cfg.train.steps, rows=rows)


@dataclass
class RunState:
    """Everything rebuilt from a checkpoint, ready to evaluate or forecast."""

    cfg: RunConfig
    splits: DatasetSplits
    model: ForecastModel
    weights: L.LossWeights
    step: int

    def forecaster(self) -> Forecaster:
        return Forecaster(self.model, self.splits.normalizer, self.splits.target_idx)


def restore(checkpoint_path) -> RunState:
    """Rebuild config, dataset, model, and weights from a checkpoint file."""
    config_text, step, arrays = load_checkpoint(checkpoint_path)
    cfg = parse_config(config_text)
    splits = load_dataset(cfg)
    model = ForecastModel(cfg.model, d=splits.d, seed=cfg.train.seed)
    weights = L.LossWeights(cfg.loss.inits(), learnable=cfg.loss.learnable)
    assign_parameters(model.params() + weights.params(), arrays)
    return RunState(cfg=cfg, splits=splits, model=model, weights=weights, step=step)
