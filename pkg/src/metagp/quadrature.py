"""Gauss-Hermite quadrature for one-dimensional Gaussian expectations."""

from functools import lru_cache

import numpy as np

from .exceptions import NonFiniteEvaluation

__all__ = ["hermite_nodes", "gauss_hermite", "gauss_hermite_vec"]


@lru_cache(maxsize=None)
def hermite_nodes(n_points):
    """Physicists' Hermite nodes and weights, cached per order.

    Computed once via the eigen-recurrence of the Hermite companion matrix
    (numpy's hermgauss); tables are immutable after first construction.
    """
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    t, w = np.polynomial.hermite.hermgauss(n_points)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def gauss_hermite(f, mean, var, n_points=20):
    """E_{x ~ N(mean, var)}[f(x)] =~ sum_i w_i f(mean + sqrt(2 var) t_i) / sqrt(pi).

    Exact for polynomials of degree <= 2 n_points - 1; var = 0 degenerates to
    f(mean).
    """
    if var < 0:
        raise ValueError(f"variance must be >= 0, got {var}")
    t, w = hermite_nodes(n_points)
    x = mean + np.sqrt(2.0 * var) * t
    fx = np.asarray([f(xi) for xi in x], dtype=np.float64)
    if not np.all(np.isfinite(fx)):
        bad = x[~np.isfinite(fx)][0]
        raise NonFiniteEvaluation(f"integrand returned non-finite value at node x={bad!r}")
    return float(w @ fx) / np.sqrt(np.pi)


def gauss_hermite_vec(fvec, mean, var, n_points=20):
    """Vectorized quadrature over arrays of (mean, var).

    fvec maps an (N, n_points) node array to integrand values of the same
    shape; returns the (N,) expectation vector.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("variances must be >= 0")
    t, w = hermite_nodes(n_points)
    x = mean[..., None] + np.sqrt(2.0 * var)[..., None] * t
    fx = fvec(x)
    if not np.all(np.isfinite(fx)):
        raise NonFiniteEvaluation("integrand returned non-finite values")
    return fx @ w / np.sqrt(np.pi)
