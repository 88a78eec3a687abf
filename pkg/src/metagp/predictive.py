"""Predictive-distribution containers shared by modules, metas and baselines."""

from dataclasses import dataclass

import numpy as np

from .likelihoods import (
    N_QUAD_DEFAULT,
    LikelihoodSpec,
    bernoulli_probability,
    log_predictive_density,
)

__all__ = ["Predictive", "GaussianYPredictive"]


@dataclass
class Predictive:
    """Latent Gaussian marginals plus the likelihood that maps them to y-space.

    latent_means / latent_vars have shape (n_latent, N).
    """

    latent_means: np.ndarray
    latent_vars: np.ndarray
    likelihood: LikelihoodSpec
    n_quad: int = N_QUAD_DEFAULT

    def log_density(self, y):
        """Per-point log predictive density at observations y."""
        return log_predictive_density(
            y, self.latent_means, self.latent_vars, self.likelihood, self.n_quad
        )

    def point(self):
        """Point predictions: y-space mean, or class-1 probability."""
        if self.likelihood.family == "bernoulli":
            return self.prob()
        return self.y_mean()

    def y_mean(self):
        if self.likelihood.family == "bernoulli":
            raise ValueError("bernoulli predictive has no y-mean; use prob()")
        return self.latent_means[0].copy()

    def y_var(self):
        """Predictive variance of y (latent variance plus observation noise)."""
        if self.likelihood.family == "gaussian":
            return self.latent_vars[0] + self.likelihood.noise_variance
        if self.likelihood.family == "het_gaussian":
            m2, v2 = self.latent_means[1], self.latent_vars[1]
            return self.latent_vars[0] + np.exp(m2 + 0.5 * v2)
        raise ValueError("bernoulli predictive has no y-variance")

    def prob(self):
        """Class-1 probability (bernoulli only)."""
        if self.likelihood.family != "bernoulli":
            raise ValueError(f"prob() undefined for {self.likelihood.family}")
        return bernoulli_probability(self.latent_means[0], self.latent_vars[0], self.n_quad)


class GaussianYPredictive:
    """Plain y-space Gaussian moments (used by the expert-combination rules)."""

    def __init__(self, mean, var, valid=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        self.valid = np.ones(self.mean.shape, dtype=bool) if valid is None else valid

    def log_density(self, y):
        from .gaussians import LOG_2PI

        y = np.asarray(y, dtype=np.float64)
        out = np.full(y.shape, np.nan)
        ok = self.valid
        out[ok] = -0.5 * (LOG_2PI + np.log(self.var[ok]) + (y[ok] - self.mean[ok]) ** 2 / self.var[ok])
        return out

    def point(self):
        return self.mean.copy()
