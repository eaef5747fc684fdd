"""CSV ingestion, normalization, sliding windows, and synthetic fixtures.

Windows keep the forecasting layout (history block, current row, next
row) and never straddle chronological split boundaries. Normalization
statistics come from the training split only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OrderingError, SchemaError, SizeError

_STD_FLOOR = 1e-8


@dataclass
class Schema:
    """Names the timestamp, feature, and target columns of a CSV file."""

    timestamp: str
    features: list[str]
    targets: list[str]

    @property
    def value_columns(self) -> list[str]:
        return self.features + self.targets


@dataclass
class SeriesTable:
    """A parsed time series: strictly increasing timestamps, float columns."""

    timestamps: list[str]
    columns: dict[str, np.ndarray]
    feature_names: list[str]
    target_names: list[str]

    def __post_init__(self):
        n = len(self.timestamps)
        for name, col in self.columns.items():
            if len(col) != n:
                raise SchemaError(f"column {name!r} has {len(col)} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def value_names(self) -> list[str]:
        return self.feature_names + self.target_names

    def values(self) -> np.ndarray:
        """All model-visible columns as an (N, d) array, features then targets."""
        return np.column_stack([self.columns[c] for c in self.value_names])

    def write_csv(self, path) -> None:
        names = list(self.columns.keys())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp"] + names)
            for i, ts in enumerate(self.timestamps):
                w.writerow([ts] + [repr(float(self.columns[c][i])) for c in names])


@dataclass
class Normalizer:
    """Per-column z-score transform; statistics fit on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        mean = values.mean(axis=0)
        std = np.maximum(values.std(axis=0), _STD_FLOOR)
        return cls(mean=mean, std=std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class WindowedDataset:
    """Normalized (history, current, next) windows for one chronological split."""

    n: int
    split: str
    hist: np.ndarray  # (N, n, d)
    x_t: np.ndarray  # (N, d)
    x_next: np.ndarray  # (N, d)
    t_index: np.ndarray  # (N,) table row index of x_t

    def __len__(self) -> int:
        return self.hist.shape[0]


@dataclass
class DatasetSplits:
    """The three windowed splits plus everything needed to denormalize."""

    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    normalizer: Normalizer
    table: SeriesTable
    n: int
    target_idx: list[int] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.train.hist.shape[2] if len(self.train) else len(self.table.value_names)

    def split(self, name: str) -> WindowedDataset:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}") from None


def load_csv(path, schema: Schema) -> SeriesTable:
    """Parse a CSV file into a SeriesTable, refusing malformed rows.

    Any row with a missing or unparsable cell is rejected with its
    1-based line number; timestamps must be strictly increasing.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        needed = [schema.timestamp] + schema.value_columns
        for col in needed:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        pos = {col: header.index(col) for col in needed}

        timestamps: list[str] = []
        cols: dict[str, list[float]] = {c: [] for c in schema.value_columns}
        prev_key = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise SchemaError(f"{path}:{lineno}: row has {len(row)} cells, expected {len(header)}")
            ts = row[pos[schema.timestamp]].strip()
            if not ts:
                raise SchemaError(f"{path}:{lineno}: empty timestamp")
            key = _timestamp_key(ts, path, lineno)
            if prev_key is not None and key <= prev_key:
                raise OrderingError(f"{path}:{lineno}: timestamp {ts!r} not strictly increasing")
            prev_key = key
            parsed = {}
            for col in schema.value_columns:
                cell = row[pos[col]].strip()
                if not cell:
                    raise SchemaError(f"{path}:{lineno}: missing value in column {col!r}")
                try:
                    parsed[col] = float(cell)
                except ValueError:
                    raise SchemaError(
                        f"{path}:{lineno}: cannot parse {cell!r} in column {col!r}"
                    ) from None
            timestamps.append(ts)
            for col, v in parsed.items():
                cols[col].append(v)

    return SeriesTable(
        timestamps=timestamps,
        columns={c: np.asarray(v, dtype=np.float64) for c, v in cols.items()},
        feature_names=list(schema.features),
        target_names=list(schema.targets),
    )


def _timestamp_key(ts: str, path, lineno: int):
    """Sortable key: integer index or ISO-8601 string (lexicographic-safe)."""
    try:
        return (0, int(ts), "")
    except ValueError:
        pass
    try:
        return (0, float(ts), "")
    except ValueError:
        pass
    # ISO-8601 timestamps compare correctly as strings within one file
    if any(ch.isdigit() for ch in ts):
        return (1, 0.0, ts)
    raise SchemaError(f"{path}:{lineno}: cannot interpret timestamp {ts!r}")


def make_windows(
    table: SeriesTable, n: int, splits: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> DatasetSplits:
    """Chronological split, train-only normalization, sliding windows.

    Per split the window count is split_length - n - 1 (clamped at 0):
    each window needs n history rows, the current row, and the next row,
    all inside one split.
    """
    if abs(sum(splits) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {splits}")
    total = len(table)
    if total < n + 2:
        raise SizeError(f"series length {total} < n + 2 = {n + 2}")
    n_train = int(round(splits[0] * total))
    n_val = int(round(splits[1] * total))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, total)]

    values = table.values()
    normalizer = Normalizer.fit(values[bounds[0][0] : bounds[0][1]])
    normed = normalizer.transform(values)

    out = {}
    for (lo, hi), name in zip(bounds, ("train", "val", "test")):
        t_lo, t_hi = lo + n, hi - 1  # valid x_t positions within [lo, hi)
        idx = np.arange(t_lo, max(t_lo, t_hi))
        hist = np.stack([normed[t - n : t] for t in idx]) if len(idx) else np.zeros((0, n, values.shape[1]))
        out[name] = WindowedDataset(
            n=n,
            split=name,
            hist=hist,
            x_t=normed[idx] if len(idx) else np.zeros((0, values.shape[1])),
            x_next=normed[idx + 1] if len(idx) else np.zeros((0, values.shape[1])),
            t_index=idx,
        )

    d_feat = len(table.feature_names)
    target_idx = list(range(d_feat, d_feat + len(table.target_names)))
    return DatasetSplits(
        train=out["train"],
        val=out["val"],
        test=out["test"],
        normalizer=normalizer,
        table=table,
        n=n,
        target_idx=target_idx,
    )


def synth_series(kind: str, length: int, seed: int = 0, **kwargs) -> SeriesTable:
    """Deterministic synthetic series for tests and smoke runs.

    kinds:
      sine           target = amp * sin(2*pi*t/period) + noise
      ar1            target[t+1] = coef * target[t] + noise
      heteroskedastic  observable driver column modulates the noise scale;
                       the exact per-point sigma is emitted as a metadata
                       column ("noise_sigma") for calibration tests.
    """
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    timestamps = [str(int(i)) for i in range(length)]

    if kind == "sine":
        period = float(kwargs.get("period", 24.0))
        amp = float(kwargs.get("amp", 1.0))
        noise = float(kwargs.get("noise", 0.0))
        value = amp * np.sin(2.0 * np.pi * t / period) + noise * rng.standard_normal(length)
        return SeriesTable(
            timestamps=timestamps,
            columns={"value": value},
            feature_names=[],
            target_names=["value"],
        )
    if kind == "ar1":
        coef = float(kwargs.get("coef", 0.8))
        noise = float(kwargs.get("noise", 1.0))
        offset = float(kwargs.get("offset", 0.0))
        value = np.empty(length)
        value[0] = offset + noise * rng.standard_normal()
        eps = noise * rng.standard_normal(length)
        for i in range(1, length):
            value[i] = offset + coef * (value[i - 1] - offset) + eps[i]
        return SeriesTable(
            timestamps=timestamps,
            columns={"value": value},
            feature_names=[],
            target_names=["value"],
        )
    if kind == "heteroskedastic":
        period = float(kwargs.get("period", 48.0))
        sigma_lo = float(kwargs.get("sigma_lo", 0.1))
        sigma_hi = float(kwargs.get("sigma_hi", 0.8))
        driver = 0.5 * (1.0 + np.sin(2.0 * np.pi * t / (period * 4.0)))
        sigma = sigma_lo + (sigma_hi - sigma_lo) * driver
        base = np.sin(2.0 * np.pi * t / period)
        value = base + sigma * rng.standard_normal(length)
        return SeriesTable(
            timestamps=timestamps,
            columns={"driver": driver, "value": value, "noise_sigma": sigma},
            feature_names=["driver"],
            target_names=["value"],
        )
    raise ConfigError(f"unknown synthetic kind {kind!r}")
