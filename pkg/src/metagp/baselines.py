"""Exact dense GP regression and the classic expert-combination rules.

The dense model is the library's reference oracle: any variational bound on
the same data and hyperparameters must stay below its log marginal. The
combination rules (PoE, gPoE, BCM, rBCM) merge per-expert Gaussian
predictive moments by precision addition, with the BCM variants correcting
for the repeatedly-counted prior.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapExceeded, DimensionMismatch
from .gaussians import LOG_2PI
from .kernels import kernel_diag, kernel_matrix
from .linalg import cholesky_psd, chol_solve, tri_solve
from .predictive import GaussianYPredictive
from .svgp import module_predict

__all__ = ["DenseGP", "dense_log_marginal", "dense_predict",
           "ExpertCombination", "expert_combination_predict"]

DENSE_CAP_DEFAULT = 2000


@dataclass
class DenseGP:
    """Exact GP regressor; the noisy-kernel factor is built lazily and cached.

    Treat instances as immutable: build a new one to change parameters.
    """

    X: np.ndarray
    y: np.ndarray
    kernel: object
    log_noise_variance: float
    cap: int = DENSE_CAP_DEFAULT
    _chol: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.shape[0] != self.X.shape[0]:
            raise DimensionMismatch("X and y row counts differ")
        if self.X.shape[0] > self.cap:
            raise CapExceeded(f"N = {self.X.shape[0]} exceeds dense cap {self.cap}")

    @property
    def noise_variance(self):
        return float(np.exp(self.log_noise_variance))

    def factor(self):
        if self._chol is None:
            Kn = kernel_matrix(self.X, self.X, self.kernel)
            Kn[np.diag_indices_from(Kn)] += self.noise_variance
            self._chol, _ = cholesky_psd(Kn)
        return self._chol


def dense_log_marginal(gp):
    """log N(y | 0, K + s2 I) via the cached factor."""
    L = gp.factor()
    w = tri_solve(L, gp.y)
    n = gp.y.shape[0]
    return -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI


def dense_predict(gp, X_star):
    """Conditional mean and latent variance at new inputs."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    L = gp.factor()
    Ks = kernel_matrix(X_star, gp.X, gp.kernel)  # (n*, N)
    alpha = chol_solve(L, gp.y)
    mean = Ks @ alpha
    V = tri_solve(L, Ks.T)
    var = kernel_diag(X_star, gp.kernel) - np.sum(V * V, axis=0)
    return mean, np.maximum(var, 0.0)


@dataclass
class ExpertCombination:
    """Aggregation rule over gaussian-likelihood experts.

    prior_variance_fn maps X_star -> per-point prior variance in y-space;
    when omitted it defaults to the mean of the experts' own prior
    variances (kernel variance plus noise), a convention the BCM papers
    leave implicit by sharing hyperparameters.
    """

    mode: str
    experts: list
    prior_variance_fn: object = None

    def __post_init__(self):
        if self.mode not in ("poe", "gpoe", "bcm", "rbcm"):
            raise ValueError(f"unknown combination mode {self.mode!r}")
        if not self.experts:
            raise ValueError("need at least one expert")
        dims = {e.input_dim for e in self.experts}
        if len(dims) > 1:
            raise DimensionMismatch(f"experts disagree on input_dim: {sorted(dims)}")
        for e in self.experts:
            if e.likelihood.family != "gaussian":
                raise ValueError("expert combinations require gaussian experts")

    def prior_variance(self, X_star):
        n = np.atleast_2d(X_star).shape[0]
        if self.prior_variance_fn is not None:
            return np.broadcast_to(
                np.asarray(self.prior_variance_fn(X_star), dtype=np.float64), (n,)
            ).copy()
        per = [e.kernel.variance + e.likelihood.noise_variance for e in self.experts]
        return np.full(n, float(np.mean(per)))


def expert_combination_predict(combo, X_star):
    """Combined y-space prediction; aggregate precision <= 0 marks the point
    invalid rather than clamping it."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    k_experts = len(combo.experts)
    moments = []
    for expert in combo.experts:
        pred = module_predict(expert, X_star)
        moments.append((pred.y_mean(), pred.y_var()))
    mus = np.stack([m for m, _ in moments])        # (K, n)
    sig2 = np.stack([v for _, v in moments])       # (K, n)
    lam = 1.0 / sig2
    prior_var = combo.prior_variance(X_star)
    prior_lam = 1.0 / prior_var

    if combo.mode == "poe":
        tau = np.sum(lam, axis=0)
        num = np.sum(lam * mus, axis=0)
    elif combo.mode == "gpoe":
        beta = 1.0 / k_experts
        tau = beta * np.sum(lam, axis=0)
        num = beta * np.sum(lam * mus, axis=0)
    elif combo.mode == "bcm":
        tau = np.sum(lam, axis=0) + (1.0 - k_experts) * prior_lam
        num = np.sum(lam * mus, axis=0)
    else:  # rbcm
        beta = 0.5 * (np.log(prior_var)[None, :] - np.log(sig2))
        tau = np.sum(beta * lam, axis=0) + (1.0 - np.sum(beta, axis=0)) * prior_lam
        num = np.sum(beta * lam * mus, axis=0)

    valid = tau > 0
    mean = np.full(X_star.shape[0], np.nan)
    var = np.full(X_star.shape[0], np.nan)
    mean[valid] = num[valid] / tau[valid]
    var[valid] = 1.0 / tau[valid]
    return GaussianYPredictive(mean, var, valid)
