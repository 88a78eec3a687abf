"""Multivariate Gaussian container and the closed-form identities on it.

All distributions are carried as (mean, lower Cholesky factor of the
covariance); the dense covariance is only reconstructed on demand.
"""

import numpy as np

from .exceptions import DimensionMismatch, InvariantViolation
from .linalg import tri_solve

__all__ = ["GaussianDist", "gaussian_logpdf", "gauss_kl", "expected_log_gaussian"]

LOG_2PI = float(np.log(2.0 * np.pi))


class GaussianDist:
    """Gaussian N(mean, S) with S = cov_chol @ cov_chol.T.

    cov_chol must be lower triangular with strictly positive diagonal, which
    makes the reconstructed covariance symmetric positive definite by
    construction.
    """

    __slots__ = ("mean", "cov_chol")

    def __init__(self, mean, cov_chol):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov_chol = np.asarray(cov_chol, dtype=np.float64)
        if cov_chol.ndim != 2 or cov_chol.shape[0] != cov_chol.shape[1]:
            raise DimensionMismatch(f"cov_chol must be square, got shape {cov_chol.shape}")
        if mean.ndim != 1 or mean.shape[0] != cov_chol.shape[0]:
            raise DimensionMismatch(
                f"mean length {mean.shape} incompatible with cov_chol {cov_chol.shape}"
            )
        if np.any(np.triu(cov_chol, 1) != 0.0):
            raise InvariantViolation("cov_chol has nonzero entries above the diagonal")
        if not np.all(np.diag(cov_chol) > 0.0):
            raise InvariantViolation("cov_chol diagonal must be strictly positive")
        self.mean = mean
        self.cov_chol = cov_chol

    @property
    def dim(self):
        return self.mean.shape[0]

    def cov(self):
        """Dense covariance S = L @ L.T."""
        return self.cov_chol @ self.cov_chol.T

    def logdet_cov(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.cov_chol))))

    def copy(self):
        return GaussianDist(self.mean.copy(), self.cov_chol.copy())

    def __repr__(self):
        return f"GaussianDist(dim={self.dim})"


def _check_dims(a, b, what):
    if a.dim != b.dim:
        raise DimensionMismatch(f"{what}: dimensions {a.dim} and {b.dim} differ")


def gaussian_logpdf(x, dist):
    """log N(x | mean, S), computed through the Cholesky factor."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape[0] != dist.dim:
        raise DimensionMismatch(f"x length {x.shape[0]} != distribution dim {dist.dim}")
    w = tri_solve(dist.cov_chol, x - dist.mean)
    return -0.5 * (dist.dim * LOG_2PI + dist.logdet_cov() + float(w @ w))


def gauss_kl(q, p):
    """KL[q || p] between Gaussians, closed form via both Cholesky factors.

    KL = 1/2 * (tr(Sp^-1 Sq) + (mp-mq)^T Sp^-1 (mp-mq) - M + log|Sp| - log|Sq|)
    """
    _check_dims(q, p, "gauss_kl")
    m = q.dim
    a = tri_solve(p.cov_chol, q.cov_chol)  # tr(Sp^-1 Sq) = ||Lp^-1 Lq||_F^2
    b = tri_solve(p.cov_chol, p.mean - q.mean)
    return 0.5 * (float(np.sum(a * a)) + float(b @ b) - m + p.logdet_cov() - q.logdet_cov())


def expected_log_gaussian(eval_dist, target):
    """E_{x ~ eval_dist}[log N(x | target)] in closed form.

    Equals -1/2 * (M log 2pi + log|S| + tr(S^-1 C) + (m-mu)^T S^-1 (m-mu))
    for eval_dist = N(m, C) and target = N(mu, S).
    """
    _check_dims(eval_dist, target, "expected_log_gaussian")
    m = target.dim
    a = tri_solve(target.cov_chol, eval_dist.cov_chol)
    b = tri_solve(target.cov_chol, eval_dist.mean - target.mean)
    return -0.5 * (
        m * LOG_2PI + target.logdet_cov() + float(np.sum(a * a)) + float(b @ b)
    )
