"""Evaluation metrics: point accuracy, distributional similarity, and
uncertainty calibration, plus the per-(target, split) report files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import ContractError

_MAPE_FLOOR = 1e-8
_SST_FLOOR = 1e-12
_QUANTILE_GRID = 1000
ECE_LEVELS = tuple(np.round(np.arange(0.1, 1.0, 0.1), 10))
PICP_Z = 1.96


@dataclass
class PointMetrics:
    mse: float
    mae: float
    mape_pct: float
    smape_pct: float
    r2: float
    skipped_mape_points: int


def point_metrics(y: np.ndarray, y_hat: np.ndarray) -> PointMetrics:
    """MSE / MAE / MAPE / SMAPE / R^2 with explicit zero handling.

    MAPE skips points with |y| <= 1e-8 and reports how many; SMAPE
    defines 0/0 as 0; R^2 on a constant truth is 1 for a perfect fit
    and -inf otherwise.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.size != y_hat.size:
        raise ContractError(f"point_metrics needs equal nonzero lengths, got {y.size}, {y_hat.size}")
    err = y - y_hat
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))

    valid = np.abs(y) > _MAPE_FLOOR
    skipped = int(np.count_nonzero(~valid))
    mape = float(np.mean(np.abs(err[valid] / y[valid])) * 100.0) if valid.any() else 0.0

    denom = (np.abs(y) + np.abs(y_hat)) / 2.0
    ratio = np.where(denom > 0.0, np.abs(err) / np.where(denom > 0.0, denom, 1.0), 0.0)
    smape = float(np.mean(ratio) * 100.0)

    sse = float(np.sum(err**2))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst < _SST_FLOOR:
        r2 = 1.0 if sse < _SST_FLOOR else float("-inf")
    else:
        r2 = 1.0 - sse / sst
    return PointMetrics(mse, mae, mape, smape, r2, skipped)


@dataclass
class DistributionMetrics:
    wasserstein: float
    ks: float
    skew_diff: float


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> float:
    """W1 between two samples: sorted-difference for equal sizes, a
    1000-point quantile grid otherwise."""
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ContractError("wasserstein_1d needs nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    p = (np.arange(_QUANTILE_GRID) + 0.5) / _QUANTILE_GRID
    qa = a[np.minimum((np.ceil(p * a.size) - 1).astype(int), a.size - 1)]
    qb = b[np.minimum((np.ceil(p * b.size) - 1).astype(int), b.size - 1)]
    return float(np.mean(np.abs(qa - qb)))


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Max ECDF gap over the pooled support."""
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ContractError("ks_statistic needs nonempty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def population_skew(x: np.ndarray) -> float:
    """m3 / sigma^3 with population moments; 0 when sigma < 1e-8."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mu = x.mean()
    m2 = np.mean((x - mu) ** 2)
    sigma = np.sqrt(m2)
    if sigma < 1e-8:
        return 0.0
    return float(np.mean((x - mu) ** 3) / sigma**3)


def distribution_metrics(y: np.ndarray, y_hat: np.ndarray) -> DistributionMetrics:
    return DistributionMetrics(
        wasserstein=wasserstein_1d(y, y_hat),
        ks=ks_statistic(y, y_hat),
        skew_diff=abs(population_skew(y) - population_skew(y_hat)),
    )


@dataclass
class CalibrationMetrics:
    ece: float
    picp95: float


def calibration_metrics(y: np.ndarray, means: np.ndarray, sigmas: np.ndarray) -> CalibrationMetrics:
    """Coverage-based calibration of Gaussian predictive intervals.

    PICP95 uses the fixed z = 1.96 interval; ECE averages the absolute
    coverage gap over the central intervals at levels 0.1 .. 0.9.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.size != means.size or y.size != sigmas.size:
        raise ContractError("calibration_metrics needs aligned nonzero-length inputs")
    if np.any(sigmas <= 0.0):
        raise ContractError("calibration_metrics requires strictly positive sigmas")
    dev = np.abs(y - means)
    picp95 = float(np.mean(dev <= PICP_Z * sigmas))
    gaps = []
    for p in ECE_LEVELS:
        z = ndtri((1.0 + p) / 2.0)
        coverage = np.mean(dev <= z * sigmas)
        gaps.append(abs(coverage - p))
    return CalibrationMetrics(ece=float(np.mean(gaps)), picp95=picp95)


@dataclass
class MetricsReport:
    target_name: str
    split: str
    n_points: int
    mse: float
    mae: float
    mape_pct: float
    smape_pct: float
    r2: float
    wasserstein: float
    ks: float
    skew_diff: float
    ece: float
    picp95: float
    skipped_mape_points: int

    def to_dict(self) -> dict:
        return {
            "target": self.target_name,
            "split": self.split,
            "n_points": self.n_points,
            "metrics": {
                "mse": self.mse,
                "mae": self.mae,
                "mape_pct": self.mape_pct,
                "smape_pct": self.smape_pct,
                "r2": self.r2,
                "wasserstein": self.wasserstein,
                "ks": self.ks,
                "skew_diff": self.skew_diff,
                "ece": self.ece,
                "picp95": self.picp95,
            },
            "skipped_mape_points": self.skipped_mape_points,
        }


CSV_FIELDS = [
    "target", "split", "n_points", "mse", "mae", "mape_pct", "smape_pct", "r2",
    "wasserstein", "ks", "skew_diff", "ece", "picp95", "skipped_mape_points",
]


def build_report(truth_timestamps, y, forecast_timestamps, means, sigmas,
                 target_name: str, split: str) -> MetricsReport:
    """Aggregate every metric for one (target, split) forecast set."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ContractError("build_report needs at least one forecast/truth pair")
    truth_timestamps = list(truth_timestamps)
    forecast_timestamps = list(forecast_timestamps)
    if truth_timestamps != forecast_timestamps or y.size != means.size:
        offending = [
            f"{a!r} != {b!r}"
            for a, b in zip(truth_timestamps, forecast_timestamps)
            if a != b
        ]
        extra = abs(len(truth_timestamps) - len(forecast_timestamps))
        if extra:
            offending.append(f"{extra} unmatched timestamps")
        raise ContractError("misaligned forecasts: " + "; ".join(offending[:10]))

    pm = point_metrics(y, means)
    dm = distribution_metrics(y, means)
    cm = calibration_metrics(y, means, sigmas)
    return MetricsReport(
        target_name=target_name,
        split=split,
        n_points=int(y.size),
        mse=pm.mse,
        mae=pm.mae,
        mape_pct=pm.mape_pct,
        smape_pct=pm.smape_pct,
        r2=pm.r2,
        wasserstein=dm.wasserstein,
        ks=dm.ks,
        skew_diff=dm.skew_diff,
        ece=cm.ece,
        picp95=cm.picp95,
        skipped_mape_points=pm.skipped_mape_points,
    )


def write_report(report: MetricsReport, json_path, csv_path) -> None:
    """One JSON document plus one appended flat CSV row per report."""
    Path(json_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    row = {
        "target": report.target_name,
        "split": report.split,
        "n_points": report.n_points,
        "mse": report.mse,
        "mae": report.mae,
        "mape_pct": report.mape_pct,
        "smape_pct": report.smape_pct,
        "r2": report.r2,
        "wasserstein": report.wasserstein,
        "ks": report.ks,
        "skew_diff": report.skew_diff,
        "ece": report.ece,
        "picp95": report.picp95,
        "skipped_mape_points": report.skipped_mape_points,
    }
    csv_path = Path(csv_path)
    new_file = not csv_path.exists()
    with open(csv_path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new_file:
            w.writeheader()
        w.writerow(row)
