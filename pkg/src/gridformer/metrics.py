"""Latitude-weighted training objective and the evaluation metric suite.

Rows of a lat/lon grid shrink toward the poles, so spatial means weight row i
by L(i) = cos(lat_i) / mean_j cos(lat_j); the weights average to one, which
makes a constant error c come out as c^2 under the weighted MSE.

The forecast score takes the square root per forecast and then averages the
roots (mean of roots, not root of the mean).  The anomaly correlation pools
every (forecast, row, column) triple into a single weighted correlation.  The
projection scores normalize by the weighted global mean of the truth and
combine as spatial + alpha * global with alpha = 5.  Mean bias is plain
(unweighted) by definition.  All metrics are computed on denormalized values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridSpec
from .tensor import Tensor, reduce_mean, mul


class MetricError(ValueError):
    pass


def lat_weights(grid: GridSpec) -> np.ndarray:
    """Row weights L(i) = cos(lat_i) / mean_j cos(lat_j); mean(L) == 1."""
    cos = np.cos(np.deg2rad(grid.lats))
    mean = cos.mean()
    if mean <= 0.0:
        raise MetricError("all grid rows sit at the poles; weights are undefined")
    return cos / mean


def _check_match(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise MetricError(f"prediction shape {pred.shape} != truth shape {truth.shape}")


def lat_mse(pred, truth, weights: np.ndarray):
    """Latitude-weighted mean squared error over (..., V, H, W); differentiable.

    Accepts a `Tensor` prediction (for training) or a numpy array; the result
    matches the input flavor.
    """
    if isinstance(pred, Tensor):
        t = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=pred.data.dtype)
        _check_match(pred.data, t)
        w = np.asarray(weights, dtype=pred.data.dtype).reshape(-1, 1)
        err = pred - Tensor(t, dtype=pred.data.dtype)
        return reduce_mean(mul(err * err, Tensor(w, dtype=pred.data.dtype)))
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    _check_match(pred, truth)
    w = np.asarray(weights).reshape(-1, 1)
    return float(((pred - truth) ** 2 * w).mean())


def lat_rmse(pred: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> float:
    """Mean over forecasts of the per-forecast weighted spatial RMSE.

    `pred`/`truth` are (N, H, W) for one variable; the square root is taken
    inside the mean over the N forecasts.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    _check_match(pred, truth)
    if pred.ndim == 2:
        pred, truth = pred[None], truth[None]
    w = np.asarray(weights).reshape(1, -1, 1)
    per_forecast = np.sqrt(((pred - truth) ** 2 * w).mean(axis=(1, 2)))
    return float(per_forecast.mean())


def climatology(truth: np.ndarray) -> np.ndarray:
    """Temporal mean (H x W) of the ground-truth series over the test period."""
    truth = np.asarray(truth)
    if truth.ndim != 3:
        raise MetricError(f"climatology expects (N, H, W), got {truth.shape}")
    return truth.mean(axis=0)


def acc(pred: np.ndarray, truth: np.ndarray, clim: np.ndarray,
        weights: np.ndarray) -> float:
    """Anomaly correlation pooled over every forecast and grid point."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    _check_match(pred, truth)
    if pred.ndim == 2:
        pred, truth = pred[None], truth[None]
    pa = pred - clim
    ta = truth - clim
    w = np.asarray(weights).reshape(1, -1, 1)
    denom = np.sqrt((w * pa * pa).sum() * (w * ta * ta).sum())
    if denom == 0.0:
        raise MetricError("anomaly variance is zero; correlation is undefined")
    return float((w * pa * ta).sum() / denom)


def _global_mean(a: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted spatial mean <A> of (..., H, W), weights over H."""
    w = weights.reshape((1,) * (a.ndim - 2) + (-1, 1))
    return (a * w).mean(axis=(-2, -1))


def nrmse_spatial(pred: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> float:
    """Spatial discrepancy of the temporal means, normalized by the truth level."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    _check_match(pred, truth)
    diff = pred.mean(axis=0) - truth.mean(axis=0)
    num = np.sqrt(_global_mean(diff * diff, weights))
    denom = _global_mean(truth, weights).mean()
    if denom == 0.0:
        raise MetricError("truth has zero global mean; normalized error is undefined")
    return float(num / denom)


def nrmse_global(pred: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> float:
    """Discrepancy of the per-forecast global means, normalized by the truth level."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    _check_match(pred, truth)
    gp = _global_mean(pred, weights)
    gt = _global_mean(truth, weights)
    denom = gt.mean()
    if denom == 0.0:
        raise MetricError("truth has zero global mean; normalized error is undefined")
    return float(np.sqrt(((gp - gt) ** 2).mean()) / denom)


def trmse(spatial: float, global_: float, alpha: float = 5.0) -> float:
    """Combined projection score: spatial + alpha * global."""
    return spatial + alpha * global_


def mean_bias(pred: np.ndarray, truth: np.ndarray) -> float:
    """Unweighted mean(pred) - mean(truth) over every point."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    _check_match(pred, truth)
    return float(pred.mean() - truth.mean())


def pearson(pred: np.ndarray, truth: np.ndarray) -> float:
    """Pearson correlation of the flattened arrays."""
    p = np.asarray(pred).ravel().astype(np.float64)
    t = np.asarray(truth).ravel().astype(np.float64)
    _check_match(p, t)
    pc = p - p.mean()
    tc = t - t.mean()
    denom = np.sqrt((pc * pc).sum() * (tc * tc).sum())
    if denom == 0.0:
        raise MetricError("zero variance; correlation is undefined")
    return float((pc * tc).sum() / denom)


# -- report ----------------------------------------------------------------------

@dataclass
class MetricReport:
    """Flat (task, variable, lead, metric, value) rows, serializable to CSV/JSON."""

    rows: list[dict] = field(default_factory=list)

    def add(self, task: str, variable: str, lead_hours: int | float | None,
            metric: str, value: float, **extra) -> None:
        row = {"task": task, "variable": variable, "lead_hours": lead_hours,
               "metric": metric, "value": float(value)}
        row.update(extra)
        self.rows.append(row)

    def extend(self, other: "MetricReport") -> None:
        self.rows.extend(other.rows)

    def value(self, metric: str, variable: str | None = None,
              lead_hours: int | float | None = None) -> float:
        for row in self.rows:
            if row["metric"] != metric:
                continue
            if variable is not None and row["variable"] != variable:
                continue
            if lead_hours is not None and row["lead_hours"] != lead_hours:
                continue
            return row["value"]
        raise KeyError(f"no row for metric={metric!r} variable={variable!r} lead={lead_hours!r}")

    def _fieldnames(self) -> list[str]:
        base = ["task", "variable", "lead_hours", "metric", "value"]
        extra = sorted({k for row in self.rows for k in row} - set(base))
        return base + extra

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self._fieldnames())
            writer.writeheader()
            writer.writerows(self.rows)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.rows, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def read_json(path) -> "MetricReport":
        with open(path) as fh:
            return MetricReport(rows=json.load(fh))
