"""Observation models: Gaussian, Bernoulli-sigmoid, heteroscedastic Gaussian.

Each family exposes the expected log-likelihood under Gaussian marginals of
the latent function(s), its derivatives with respect to those marginal
moments (consumed by the trainers), and the log predictive density. The
Bernoulli expectations and the heteroscedastic predictive are handled with
Gauss-Hermite quadrature; everything else is closed form.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArityMismatch, UnsupportedObservation
from .gaussians import LOG_2PI
from .quadrature import hermite_nodes

__all__ = ["LikelihoodSpec", "link_map", "expected_log_lik", "expected_log_lik_grads",
           "log_predictive_density", "N_QUAD_DEFAULT"]

N_QUAD_DEFAULT = 20

FAMILIES = ("gaussian", "bernoulli", "het_gaussian")
N_LATENT = {"gaussian": 1, "bernoulli": 1, "het_gaussian": 2}


@dataclass
class LikelihoodSpec:
    """Family tag plus family-specific parameters.

    gaussian carries log_noise_variance; bernoulli and het_gaussian have no
    free parameters (the heteroscedastic mean and log-variance both come
    from latent functions).
    """

    family: str
    log_noise_variance: float = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown likelihood family {self.family!r}")
        if self.family == "gaussian":
            if self.log_noise_variance is None:
                self.log_noise_variance = float(np.log(0.1))
            self.log_noise_variance = float(self.log_noise_variance)
        elif self.log_noise_variance is not None:
            raise ValueError(f"{self.family} takes no noise parameter")

    @property
    def n_latent(self):
        return N_LATENT[self.family]

    @property
    def noise_variance(self):
        return float(np.exp(self.log_noise_variance))

    def copy(self):
        return LikelihoodSpec(self.family, self.log_noise_variance)


def link_map(family, f_values):
    """Deterministic map from latent values to likelihood parameters."""
    f = np.atleast_1d(np.asarray(f_values, dtype=np.float64))
    if f.shape[0] != N_LATENT[family]:
        raise ArityMismatch(
            f"{family} expects {N_LATENT[family]} latent value(s), got {f.shape[0]}"
        )
    if family == "gaussian":
        return f.copy()
    if family == "bernoulli":
        return _sigmoid(f)
    return np.array([f[0], np.exp(f[1])])


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _check_bernoulli(y):
    if not np.all((y == 0.0) | (y == 1.0)):
        raise UnsupportedObservation("bernoulli observations must lie in {0, 1}")


def _as_marginals(spec, means, variances):
    """Validate and broadcast per-latent marginal arrays to (n_latent, N)."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if means.shape[0] != spec.n_latent or variances.shape != means.shape:
        raise ArityMismatch(
            f"{spec.family} expects marginal arrays of shape ({spec.n_latent}, N)"
        )
    if np.any(variances < 0):
        raise ValueError("marginal variances must be >= 0")
    return means, variances


def expected_log_lik(y, means, variances, spec, n_quad=N_QUAD_DEFAULT):
    """Per-point E_{q(f)}[log p(y | f)] under independent latent marginals.

    means/variances are (n_latent, N) (a 1-D array is accepted for
    single-latent families); returns an (N,) vector of nats.
    """
    values, _, _, _ = expected_log_lik_grads(y, means, variances, spec, n_quad)
    return values


def expected_log_lik_grads(y, means, variances, spec, n_quad=N_QUAD_DEFAULT):
    """Expected log-likelihood with derivatives w.r.t. the marginal moments.

    Returns (values, d_mean, d_var, d_params) where values is (N,), d_mean
    and d_var are (n_latent, N), and d_params maps parameter name ->
    (N,) per-point derivative (empty for parameter-free families).
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m, v = _as_marginals(spec, means, variances)
    if y.shape[0] != m.shape[1]:
        raise ArityMismatch(f"{y.shape[0]} observations vs {m.shape[1]} marginals")

    if spec.family == "gaussian":
        s2 = spec.noise_variance
        resid = y - m[0]
        values = -0.5 * (LOG_2PI + spec.log_noise_variance) - (resid**2 + v[0]) / (2.0 * s2)
        d_mean = (resid / s2)[None, :]
        d_var = np.full((1, y.shape[0]), -0.5 / s2)
        d_lnv = -0.5 + (resid**2 + v[0]) / (2.0 * s2)
        return values, d_mean, d_var, {"log_noise_variance": d_lnv}

    if spec.family == "bernoulli":
        _check_bernoulli(y)
        t, w = hermite_nodes(n_quad)
        wn = w / np.sqrt(np.pi)
        sign = 2.0 * y - 1.0
        c = np.sqrt(2.0 * v[0])
        f = m[0][:, None] + c[:, None] * t[None, :]
        sf = sign[:, None] * f
        values = _log_sigmoid(sf) @ wn
        g1 = sign[:, None] * _sigmoid(-sf)  # d/df log sigmoid(sign * f)
        d_mean = (g1 @ wn)[None, :]
        # derivative of the quadrature sum itself: nodes enter through
        # sqrt(2v); at v ~ 0 switch to the Price limit 0.5 E[g'']
        d_var = np.empty((1, y.shape[0]))
        small = c < 1e-8
        if np.any(~small):
            d_var[0, ~small] = ((g1[~small] * t[None, :]) @ wn) / c[~small]
        if np.any(small):
            g2 = -_sigmoid(sf[small]) * _sigmoid(-sf[small])
            d_var[0, small] = 0.5 * (g2 @ wn)
        return values, d_mean, d_var, {}

    # het_gaussian: y ~ N(f1, exp(f2)) with independent latent marginals
    e = np.exp(-m[1] + 0.5 * v[1])
    sq = (y - m[0]) ** 2 + v[0]
    values = -0.5 * LOG_2PI - 0.5 * m[1] - 0.5 * e * sq
    d_mean = np.stack([e * (y - m[0]), -0.5 + 0.5 * e * sq])
    d_var = np.stack([-0.5 * e * np.ones_like(y), -0.25 * e * sq])
    return values, d_mean, d_var, {}


def log_predictive_density(y, means, variances, spec, n_quad=N_QUAD_DEFAULT):
    """Per-point log p(y) with the latent marginals integrated out."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m, v = _as_marginals(spec, means, variances)
    if y.shape[0] != m.shape[1]:
        raise ArityMismatch(f"{y.shape[0]} observations vs {m.shape[1]} marginals")

    if spec.family == "gaussian":
        s2 = v[0] + spec.noise_variance
        return -0.5 * (LOG_2PI + np.log(s2) + (y - m[0]) ** 2 / s2)

    if spec.family == "bernoulli":
        _check_bernoulli(y)
        p1 = bernoulli_probability(m[0], v[0], n_quad)
        p = np.where(y == 1.0, p1, 1.0 - p1)
        return np.log(np.clip(p, 1e-300, None))

    # het_gaussian: quadrature over the log-variance latent, inner closed form
    t, w = hermite_nodes(n_quad)
    wn = w / np.sqrt(np.pi)
    f2 = m[1][:, None] + np.sqrt(2.0 * v[1])[:, None] * t[None, :]
    s2 = v[0][:, None] + np.exp(f2)
    dens = np.exp(-0.5 * (LOG_2PI + np.log(s2) + (y[:, None] - m[0][:, None]) ** 2 / s2))
    return np.log(np.clip(dens @ wn, 1e-300, None))


def bernoulli_probability(mean, var, n_quad=N_QUAD_DEFAULT):
    """Predictive class-1 probability E_{N(mean, var)}[sigmoid(f)]."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    var = np.atleast_1d(np.asarray(var, dtype=np.float64))
    t, w = hermite_nodes(n_quad)
    f = mean[:, None] + np.sqrt(2.0 * var)[:, None] * t[None, :]
    return _sigmoid(f) @ (w / np.sqrt(np.pi))
