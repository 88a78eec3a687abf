"""Squared-exponential ARD covariance with analytic gradients.

Hyperparameters live in the log domain so all optimization is
unconstrained and the log-derivative identities are exact.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backends
from .exceptions import DimensionMismatch

__all__ = ["KernelParams", "kernel_matrix", "kernel_diag", "kernel_param_grads", "KERNEL_FAMILY"]

KERNEL_FAMILY = "sqexp_ard"


@dataclass
class KernelParams:
    """log signal variance and per-dimension log lengthscales."""

    log_variance: float
    log_lengthscales: np.ndarray

    def __post_init__(self):
        self.log_variance = float(self.log_variance)
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=np.float64)
        )
        if not np.isfinite(self.log_variance) or not np.all(np.isfinite(self.log_lengthscales)):
            raise ValueError("kernel parameters must be finite")

    @property
    def input_dim(self):
        return self.log_lengthscales.shape[0]

    @property
    def variance(self):
        return float(np.exp(self.log_variance))

    def copy(self):
        return KernelParams(self.log_variance, self.log_lengthscales.copy())

    @classmethod
    def default(cls, input_dim):
        return cls(0.0, np.zeros(input_dim))


def _check_inputs(params, *Xs):
    out = []
    for X in Xs:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != params.input_dim:
            raise DimensionMismatch(
                f"input has {X.shape[1]} columns, kernel expects {params.input_dim}"
            )
        out.append(X)
    return out


def kernel_matrix(X1, X2, params):
    """N x M cross-covariance between the rows of X1 and X2."""
    X1, X2 = _check_inputs(params, X1, X2)
    return backends.sqexp_matrix(X1, X2, params.log_variance, params.log_lengthscales)


def kernel_diag(X, params):
    """diag k(X, X): constant signal variance for this stationary kernel."""
    (X,) = _check_inputs(params, X)
    return np.full(X.shape[0], params.variance)


def kernel_param_grads(X1, X2, params):
    """Forward Jacobians of the cross-covariance matrix.

    Returns a dict with
      d_log_variance : N x M  (equals K by the log-derivative identity)
      d_log_lengthscales : p x N x M
      d_X1 : N x M x p   (entry [i, j, d] = dK[i, j] / dX1[i, d])

    This explicit route is independent of the fused backend contraction and
    cross-checks it in the test suite.
    """
    X1, X2 = _check_inputs(params, X1, X2)
    K = kernel_matrix(X1, X2, params)
    inv_l2 = np.exp(-2.0 * params.log_lengthscales)
    diff = X1[:, None, :] - X2[None, :, :]  # N x M x p
    d_ls = K[None, :, :] * np.moveaxis(diff * diff, -1, 0) * inv_l2[:, None, None]
    d_x1 = -K[:, :, None] * diff * inv_l2[None, None, :]
    return {
        "d_log_variance": K.copy(),
        "d_log_lengthscales": d_ls,
        "d_X1": d_x1,
    }


def kernel_vjp(X1, X2, params, K, dK):
    """Fused reverse-mode contraction; see backends.sqexp_vjp."""
    return backends.sqexp_vjp(X1, X2, params.log_variance, params.log_lengthscales, K, dK)
