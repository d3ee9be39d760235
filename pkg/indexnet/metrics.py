"""Forecast metrics: MSE, MAE, MAPE (%), RMSE over all points."""
import math
from typing import NamedTuple

import torch

from indexnet.errors import ShapeError

MAPE_FLOOR = 1e-8


class MetricsReport(NamedTuple):
    mse: float
    mae: float
    mape: float
    rmse: float
    n_points: int
    space: str = 'standardized'
    mape_skipped: int = 0

    def to_dict(self):
        return self._asdict()


def compute_metrics(pred, truth, space='standardized') -> MetricsReport:
    pred = torch.as_tensor(pred, dtype=torch.float64)
    truth = torch.as_tensor(truth, dtype=torch.float64)
    if pred.shape != truth.shape:
        raise ShapeError('prediction shape', tuple(truth.shape), tuple(pred.shape))
    if pred.numel() == 0:
        raise ShapeError('number of points', '> 0', 0)
    diff = pred - truth
    mse = (diff ** 2).mean().item()
    mae = diff.abs().mean().item()
    valid = truth.abs() >= MAPE_FLOOR
    n_valid = int(valid.sum())
    if n_valid:
        mape = ((diff[valid] / truth[valid]).abs().mean() * 100).item()
    else:
        mape = float('nan')
    return MetricsReport(mse=mse, mae=mae, mape=mape, rmse=math.sqrt(mse), n_points=pred.numel(),
                         space=space, mape_skipped=pred.numel() - n_valid)


def mean_report(reports) -> MetricsReport:
    reports = list(reports)
    n = len(reports)
    mse = sum(r.mse for r in reports) / n
    # runs whose truths were all below the MAPE floor have no MAPE
    mapes = [r.mape for r in reports if math.isfinite(r.mape)]
    mape = sum(mapes) / len(mapes) if mapes else float('nan')
    return MetricsReport(mse=mse, mae=sum(r.mae for r in reports) / n, mape=mape,
                         rmse=math.sqrt(mse), n_points=reports[0].n_points, space=reports[0].space,
                         mape_skipped=reports[0].mape_skipped)
