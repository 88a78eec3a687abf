"""Evaluation metrics over predictive distributions."""

import numpy as np

from .exceptions import LengthMismatch

__all__ = ["compute_metrics", "format_metrics_line"]


def compute_metrics(predictions, targets):
    """nlpd / rmse / mae of a predictive distribution against targets.

    predictions exposes point() and log_density(y) (Predictive or
    GaussianYPredictive); nlpd is the per-point mean of -log density, and
    the error metrics compare point predictions (probabilities, for binary
    targets) against the observed values. Points a combination rule marked
    invalid propagate as nan.
    """
    targets = np.asarray(targets, dtype=np.float64)
    point = np.asarray(predictions.point(), dtype=np.float64)
    if point.shape[0] != targets.shape[0]:
        raise LengthMismatch(f"{point.shape[0]} predictions vs {targets.shape[0]} targets")
    logdens = np.asarray(predictions.log_density(targets), dtype=np.float64)
    err = point - targets
    return {
        "nlpd": float(-np.mean(logdens)),
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
    }


def format_metrics_line(name, metrics):
    """The one-line tab-separated record `name nlpd rmse mae`."""
    return "\t".join([
        name,
        f"{metrics['nlpd']:.6f}",
        f"{metrics['rmse']:.6f}",
        f"{metrics['mae']:.6f}",
    ])
