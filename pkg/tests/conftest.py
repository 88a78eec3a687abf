"""Shared fixtures and the finite-difference harness guarding the gradients."""

import numpy as np
import pytest

from metagp.gaussians import GaussianDist
from metagp.kernels import KernelParams
from metagp.likelihoods import LikelihoodSpec
from metagp.svgp import GPModule


def central_diff(f, x0, h=1e-5):
    """Centered finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4, floor=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.abs(numeric), floor)
    worst = np.max(np.abs(analytic - numeric) / denom)
    assert worst < rel, f"gradient mismatch: max relative error {worst:.3e}"


def random_chol(rng, m, scale=0.4):
    L = np.tril(rng.standard_normal((m, m)) * scale)
    L[np.diag_indices(m)] = np.exp(rng.standard_normal(m) * 0.3)
    return L


def random_gaussian(rng, m):
    return GaussianDist(rng.standard_normal(m), random_chol(rng, m))


def random_module(rng, n_inducing=3, input_dim=1, family="gaussian", elbo_star=-10.0):
    lik = LikelihoodSpec(family, -1.0 if family == "gaussian" else None)
    nl = lik.n_latent
    Z = rng.standard_normal((n_inducing, input_dim))
    big = np.zeros((nl * n_inducing, nl * n_inducing))
    for l in range(nl):
        blk = slice(l * n_inducing, (l + 1) * n_inducing)
        big[blk, blk] = random_chol(rng, n_inducing)
    q_u = GaussianDist(rng.standard_normal(nl * n_inducing), big)
    kernel = KernelParams(0.2 * rng.standard_normal(), 0.3 * rng.standard_normal(input_dim))
    return GPModule(Z=Z, q_u=q_u, kernel=kernel, likelihood=lik,
                    elbo_star=elbo_star, n_train=40)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
