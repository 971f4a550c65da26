"""Forecast error metrics, per-horizon reports and seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .autodiff import ContractError

HORIZONS = (3, 7, 14)
NAMES = ("RMSE", "MAE", "MAPE", "RAE")


@dataclass
class MetricReport:
    RMSE: float
    MAE: float
    MAPE: float | None  # percent; None when every target is zero
    RAE: float | None  # None when targets are constant
    zero_targets: int = 0

    def get(self, name: str) -> float | None:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"RMSE": self.RMSE, "MAE": self.MAE, "MAPE": self.MAPE, "RAE": self.RAE,
                "zero_targets": self.zero_targets}


def metrics(y_hat, y) -> MetricReport:
    """RMSE, MAE, MAPE (%) and RAE over all entries of equally shaped arrays.

    MAPE skips zero targets (their count is reported); RAE divides the total
    absolute error by the total absolute deviation from the grand mean.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ContractError(f"prediction shape {y_hat.shape} differs from target shape {y.shape}")
    if y.size == 0:
        raise ContractError("no targets to score")
    err = y_hat - y
    abs_err = np.abs(err)
    nz = y != 0
    mape = float(np.mean(abs_err[nz] / np.abs(y[nz])) * 100.0) if nz.any() else None
    denom = np.abs(y - y.mean()).sum()
    rae = float(abs_err.sum() / denom) if denom > 0 else None
    return MetricReport(float(np.sqrt(np.mean(err ** 2))), float(abs_err.mean()), mape, rae, int((~nz).sum()))


def horizon_report(y_hat, y, horizons: Sequence[int] = HORIZONS) -> dict[str, MetricReport]:
    """Metrics for ``(..., T_out)`` forecasts: overall and at each listed day ahead that exists."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = {"overall": metrics(y_hat, y)}
    for h in horizons:
        if h <= y.shape[-1]:
            out[f"h{h}"] = metrics(y_hat[..., h - 1], y[..., h - 1])
    return out


def mean_ci(values: Iterable[float]) -> tuple[float, float | None]:
    """Mean and the 95% normal-approximation half-width ``1.96 * sd / sqrt(runs)``.

    The half-width is None for fewer than two runs.
    """
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return math.nan, None
    if v.size < 2:
        return float(v[0]), None
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError("rank correlation needs equally sized inputs")
    return float(spearmanr(a, b)[0])
