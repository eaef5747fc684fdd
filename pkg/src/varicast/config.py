"""Run configuration: INI-style key=value sections, validated into dataclasses."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields

from .data import DatasetSplits, Schema, load_csv, make_windows, synth_series
from .errors import ConfigError
from .model import ModelConfig

OUTPUT_DIR_ENV = "VARICAST_OUTPUT_DIR"

SYNTH_KINDS = ("sine", "ar1", "heteroskedastic")


@dataclass
class DataConfig:
    kind: str = "csv"  # csv | sine | ar1 | heteroskedastic
    path: str = ""
    timestamp_col: str = "timestamp"
    features: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=lambda: ["value"])
    n: int = 24
    splits: tuple[float, float, float] = (0.7, 0.1, 0.2)
    length: int = 2000  # synthetic kinds only
    seed: int = 0
    noise: float = 0.0
    period: float = 24.0

    def validate(self) -> None:
        if self.kind not in ("csv",) + SYNTH_KINDS:
            raise ConfigError(f"unknown data.kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("data.kind=csv requires data.path")
        if self.n < 2:
            raise ConfigError("data.n must be >= 2")
        if self.length < 1:
            raise ConfigError("data.length must be >= 1")


@dataclass
class LossConfig:
    lambda_pred: float = 1.0
    lambda_robust: float = 0.1
    lambda_smooth: float = 0.01
    lambda_attn: float = 0.01
    learnable: bool = False
    beta_max: float = 1.0
    warmup: int = 500

    def validate(self) -> None:
        if self.beta_max < 0 or self.warmup < 0:
            raise ConfigError("loss.beta_max and loss.warmup must be >= 0")

    def inits(self) -> dict[str, float]:
        return {
            "pred": self.lambda_pred,
            "robust": self.lambda_robust,
            "smooth": self.lambda_smooth,
            "attn": self.lambda_attn,
        }


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 32
    steps: int = 2000
    clip_norm: float = 5.0
    seed: int = 0
    checkpoint_every: int = 500

    def validate(self) -> None:
        if self.lr <= 0 or self.batch < 1 or self.steps < 1:
            raise ConfigError("train.lr, train.batch, train.steps must be positive")
        if self.clip_norm < 0:
            raise ConfigError("train.clip_norm must be >= 0 (0 disables clipping)")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"

    def validate(self) -> None:
        self.data.validate()
        self.model.validate()
        self.loss.validate()
        self.train.validate()


def _coerce(raw: str, kind, name: str):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == list[str]:
            return [p.strip() for p in raw.split(",") if p.strip()]
        if kind == tuple[float, float, float]:
            parts = tuple(float(p) for p in raw.split(","))
            if len(parts) != 3:
                raise ValueError(raw)
            return parts
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {raw!r}") from None
    raise ConfigError(f"unsupported config field type for {name}")


def _fill(section_name: str, target, parser: configparser.ConfigParser):
    if not parser.has_section(section_name):
        return
    known = {f.name: f.type for f in fields(target)}
    # dataclass field types arrive as strings when annotations are deferred
    resolved = {
        "str": str, "int": int, "float": float, "bool": bool,
        "list[str]": list[str], "tuple[float, float, float]": tuple[float, float, float],
    }
    for key, raw in parser.items(section_name):
        if key not in known:
            raise ConfigError(f"unknown key {section_name}.{key}")
        kind = known[key]
        if isinstance(kind, str):
            kind = resolved[kind]
        setattr(target, key, _coerce(raw, kind, f"{section_name}.{key}"))


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(strict=False)  # repeated sections merge, last key wins
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    _fill("data", cfg.data, parser)
    _fill("model", cfg.model, parser)
    _fill("loss", cfg.loss, parser)
    _fill("train", cfg.train, parser)
    if parser.has_section("output"):
        for key, raw in parser.items("output"):
            if key != "dir":
                raise ConfigError(f"unknown key output.{key}")
            cfg.output_dir = raw.strip()
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        cfg.output_dir = env_dir
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    """Serialize back to the INI format (used for checkpoint snapshots)."""
    parser = configparser.ConfigParser()
    parser["data"] = {
        "kind": cfg.data.kind,
        "path": cfg.data.path,
        "timestamp_col": cfg.data.timestamp_col,
        "features": ", ".join(cfg.data.features),
        "targets": ", ".join(cfg.data.targets),
        "n": str(cfg.data.n),
        "splits": ", ".join(repr(s) for s in cfg.data.splits),
        "length": str(cfg.data.length),
        "seed": str(cfg.data.seed),
        "noise": repr(cfg.data.noise),
        "period": repr(cfg.data.period),
    }
    parser["model"] = {f.name: str(getattr(cfg.model, f.name)) for f in fields(cfg.model)}
    parser["loss"] = {
        "lambda_pred": repr(cfg.loss.lambda_pred),
        "lambda_robust": repr(cfg.loss.lambda_robust),
        "lambda_smooth": repr(cfg.loss.lambda_smooth),
        "lambda_attn": repr(cfg.loss.lambda_attn),
        "learnable": str(cfg.loss.learnable),
        "beta_max": repr(cfg.loss.beta_max),
        "warmup": str(cfg.loss.warmup),
    }
    parser["train"] = {
        "lr": repr(cfg.train.lr),
        "batch": str(cfg.train.batch),
        "steps": str(cfg.train.steps),
        "clip_norm": repr(cfg.train.clip_norm),
        "seed": str(cfg.train.seed),
        "checkpoint_every": str(cfg.train.checkpoint_every),
    }
    parser["output"] = {"dir": cfg.output_dir}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_dataset(cfg: RunConfig) -> DatasetSplits:
    """Materialize the configured dataset into windowed splits."""
    if cfg.data.kind == "csv":
        schema = Schema(timestamp=cfg.data.timestamp_col,
                        features=cfg.data.features, targets=cfg.data.targets)
        table = load_csv(cfg.data.path, schema)
    else:
        kwargs: dict = {}
        if cfg.data.kind == "sine":
            kwargs = {"noise": cfg.data.noise, "period": cfg.data.period}
        elif cfg.data.kind == "ar1":
            kwargs = {"noise": cfg.data.noise if cfg.data.noise > 0 else 1.0}
        elif cfg.data.kind == "heteroskedastic":
            kwargs = {"period": cfg.data.period}
        table = synth_series(cfg.data.kind, cfg.data.length, seed=cfg.data.seed, **kwargs)
    return make_windows(table, n=cfg.data.n, splits=cfg.data.splits)
