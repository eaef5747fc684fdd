"""Command-line interface.

Subcommands: train, evaluate, forecast, sample, gradcheck, synth.
Exit codes: 0 success, 1 usage or contract violation, 2 data problem,
3 numeric problem.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_hash
from .config import SYNTH_KINDS, load_config
from .data import synth_series
from .errors import (
    ContractError,
    DataError,
    ConfigError,
    DomainError,
    NumericError,
    ShapeError,
    VaricastError,
)
from .forecast import evaluate_split, write_forecast_csv, write_plot_csv
from .metrics import build_report, write_report
from .model import model_grad_check
from .tensor import Tensor
from .train import restore, train, train_eps

GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="varicast", description="Probabilistic time-series forecasting")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)

    e = sub.add_parser("evaluate", help="metrics report for a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--sampled", action="store_true", help="draw latents instead of using the mean")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--dump-attention", metavar="DIR", default=None,
                   help="write per-scale attention matrices for the first window as CSV")
    e.add_argument("--out", default=None, help="output directory (default: run output dir)")

    f = sub.add_parser("forecast", help="multi-step forecast from one origin")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--origin", required=True,
                   help="table row index (or exact timestamp) of the forecast origin")
    f.add_argument("--horizon", type=int, required=True, metavar="K")
    f.add_argument("--mode", choices=("mean-latent", "sampled"), default="mean-latent")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--no-teacher-covariates", action="store_true",
                   help="feed predictions back for every column, even known covariates")
    f.add_argument("--out", default=None)

    s = sub.add_parser("sample", help="draw generative samples from the prior")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full gradient")
    g.add_argument("--config", required=True)
    g.add_argument("--module", default=None, help="restrict to one parameter-name prefix")

    y = sub.add_parser("synth", help="write a synthetic series as CSV")
    y.add_argument("--kind", choices=SYNTH_KINDS, required=True)
    y.add_argument("--length", type=int, required=True)
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--noise", type=float, default=0.0)
    y.add_argument("--period", type=float, default=24.0)

    return p


def _outdir(args, state) -> Path:
    out = Path(args.out) if args.out else Path(state.cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg)
    final = result.rows[-1]["total"] if result.rows else float("nan")
    print(f"trained {result.steps} steps; final total loss {final:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def cmd_evaluate(args) -> int:
    state = restore(args.checkpoint)
    out = _outdir(args, state)
    mode = "sampled" if args.sampled else "mean-latent"
    ev = evaluate_split(state.model, state.splits, args.split, mode=mode, seed=args.seed)
    names = state.splits.table.value_names
    for j in state.splits.target_idx:
        report = build_report(
            ev.timestamps, ev.y_true[:, j], ev.timestamps, ev.means[:, j], ev.sigmas[:, j],
            target_name=names[j], split=args.split,
        )
        json_path = out / f"report_{names[j]}_{args.split}.json"
        write_report(report, json_path, out / "metrics.csv")
        print(f"{names[j]} [{args.split}] n={report.n_points} "
              f"mse={report.mse:.6g} r2={report.r2:.4f} picp95={report.picp95:.3f} "
              f"ece={report.ece:.4f} -> {json_path}")

    if args.dump_attention:
        _dump_attention(state, args.split, Path(args.dump_attention))
    return 0


def _dump_attention(state, split: str, dump_dir: Path) -> None:
    if state.model.attention is None:
        print("attention disabled in this model; nothing to dump")
        return
    dump_dir.mkdir(parents=True, exist_ok=True)
    ds = state.splits.split(split)
    if len(ds) == 0:
        raise ContractError(f"split {split!r} has no windows to dump attention for")
    eps = np.zeros((1, state.cfg.model.latent))
    fwd = state.model.forward(Tensor(ds.hist[:1]), Tensor(ds.x_t[:1]), eps)
    for name, m in fwd.attn.attention_maps.items():
        mat = m.data[0].mean(axis=0)  # average heads
        path = dump_dir / f"attention_{name}.csv"
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(mat.reshape(-1, mat.shape[-1]).tolist())
        print(f"wrote {path}")


def _resolve_origin(state, origin: str) -> int:
    table = state.splits.table
    try:
        idx = int(origin)
    except ValueError:
        try:
            idx = table.timestamps.index(origin)
        except ValueError:
            raise ContractError(f"origin timestamp {origin!r} not found") from None
    n = state.cfg.data.n
    if idx < n or idx >= len(table):
        raise ContractError(
            f"origin {idx} needs {n} history rows and must lie inside the table "
            f"(valid range [{n}, {len(table) - 1}])"
        )
    return idx


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        raise ContractError(f"horizon must be >= 1, got {args.horizon}")
    state = restore(args.checkpoint)
    out = _outdir(args, state)
    idx = _resolve_origin(state, args.origin)
    table = state.splits.table
    normed = state.splits.normalizer.transform(table.values())
    n = state.cfg.data.n
    hist, x_t = normed[idx - n : idx], normed[idx]

    future = None
    if not args.no_teacher_covariates and idx + args.horizon < len(table):
        future = normed[idx + 1 : idx + 1 + args.horizon]

    fc = state.forecaster()
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 2, idx]))
    result = fc.forecast_multi(
        hist, x_t, args.horizon, mode=args.mode, rng=rng, future_rows=future,
        meta={"origin_index": idx, "seed": args.seed,
              "checkpoint": checkpoint_hash(args.checkpoint)},
    )
    names = table.value_names
    fpath = out / "forecast.csv"
    write_forecast_csv(fpath, result, table.timestamps[idx], names, state.splits.target_idx)
    print(f"wrote {fpath}")
    for j in state.splits.target_idx:
        ppath = out / f"plot_{names[j]}.csv"
        write_plot_csv(ppath, result, j)
        print(f"wrote {ppath}")
    return 0


def cmd_sample(args) -> int:
    if args.count < 1:
        raise ContractError(f"count must be >= 1, got {args.count}")
    state = restore(args.checkpoint)
    out = _outdir(args, state)
    ds = state.splits.train
    hist, x_t = ds.hist[-1:], ds.x_t[-1:]
    eps = np.zeros((1, state.cfg.model.latent))
    fwd = state.model.forward(Tensor(hist), Tensor(x_t), eps)
    c_t = Tensor(np.repeat(fwd.c_t.data, args.count, axis=0))
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 3]))
    draws = state.model.cvae.sample_prior(c_t, rng).data
    denorm = state.splits.normalizer.inverse(draws)
    names = state.splits.table.value_names
    path = out / "samples.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + names)
        for i, row in enumerate(denorm):
            w.writerow([i] + [repr(float(v)) for v in row])
    print(f"wrote {args.count} samples to {path}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    from .config import load_dataset
    from .losses import LossWeights
    from .model import ForecastModel

    splits = load_dataset(cfg)
    model = ForecastModel(cfg.model, d=splits.d, seed=cfg.train.seed)
    weights = LossWeights(cfg.loss.inits(), learnable=cfg.loss.learnable)
    ds = splits.train
    rows = min(3, len(ds))
    eps = train_eps(cfg.train.seed, 0, rows, cfg.model.latent)
    report = model_grad_check(
        model, weights, ds.hist[:rows], ds.x_t[:rows], ds.x_next[:rows], eps,
        beta=cfg.loss.beta_max, module=args.module,
    )
    worst_name = max(report.per_param, key=report.per_param.get)
    print(f"max relative error: {report.max_rel_error:.6e} ({worst_name})")
    return 0 if report.max_rel_error <= GRADCHECK_TOL else 3


def cmd_synth(args) -> int:
    table = synth_series(args.kind, args.length, seed=args.seed,
                         **({"noise": args.noise, "period": args.period}
                            if args.kind == "sine" else
                            {"period": args.period} if args.kind == "heteroskedastic"
                            else {"noise": args.noise if args.noise > 0 else 1.0}))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out)
    print(f"wrote {len(table)} rows to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "sample": cmd_sample,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (DataError, ConfigError) as exc:
        print(f"varicast: data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, DomainError, ShapeError) as exc:
        print(f"varicast: numeric error: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"varicast: {exc}", file=sys.stderr)
        return 1
    except VaricastError as exc:
        print(f"varicast: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
