"""Single-output meta-GP: ensembling a module dictionary without data.

The training objective is the module-driven bound

    sum_k L*_k  +  sum_k E_{q_C(u_k)}[log q_k(u_k) - log p_k(u_k)]
               -  KL[q(u_*) || N(0, K_**)]

where q_C(u_k) is the meta's predictive posterior evaluated at module k's
inducing inputs. Everything is closed-form Gaussian algebra; the only
inputs are the modules themselves, never observations.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import IncompatibleModules
from .gaussians import GaussianDist
from .kernels import KernelParams, kernel_matrix, kernel_vjp
from .likelihoods import N_QUAD_DEFAULT, LikelihoodSpec
from .linalg import cholesky_psd, chol_solve, tri_solve
from .module_io import validate_dictionary
from .optim import maximize
from .predictive import Predictive
from .svgp import GPModule, _Packer, _latent_marginals, _prior_kl_and_grads

__all__ = ["MetaGP", "contrastive_posterior", "contrastive_term", "meta_elbo",
           "train_meta", "meta_predict", "export_meta_as_module"]


@dataclass
class MetaGP:
    """Global variational state fitted to a dictionary of modules."""

    Z_star: np.ndarray
    q_u_star: GaussianDist
    kernel: KernelParams
    elbo_sum_constant: float
    likelihood: LikelihoodSpec

    def __post_init__(self):
        self.Z_star = np.atleast_2d(np.asarray(self.Z_star, dtype=np.float64))
        if self.q_u_star.dim != self.Z_star.shape[0]:
            raise ValueError("q_u_star dimension must equal the Z_star row count")

    @property
    def n_inducing(self):
        return self.Z_star.shape[0]


def _require_single_latent(module):
    if module.n_latent != 1:
        raise IncompatibleModules(
            "single-output meta-GP accepts single-latent modules only; "
            "route heteroscedastic modules through the multi-output path"
        )


def contrastive_posterior(meta, module):
    """q_C(u_k): the meta's predictive posterior at the module's inducing inputs.

    N(K_*k^T K_**^-1 mu_*, K_kk + K_*k^T K_**^-1 (S_* - K_**) K_**^-1 K_*k),
    all kernels under the meta's hyperparameters.
    """
    _require_single_latent(module)
    Kss = kernel_matrix(meta.Z_star, meta.Z_star, meta.kernel)
    Lz, _ = cholesky_psd(Kss)
    B = kernel_matrix(meta.Z_star, module.Z, meta.kernel)
    P = kernel_matrix(module.Z, module.Z, meta.kernel)
    W = chol_solve(Lz, B)
    m_c = W.T @ meta.q_u_star.mean
    U = meta.q_u_star.cov_chol.T @ W
    S_c = P - B.T @ W + U.T @ U
    Lc, _ = cholesky_psd(0.5 * (S_c + S_c.T))
    return GaussianDist(m_c, Lc)


def module_prior(module):
    """The module's own prior over its inducing outputs, N(0, K_kk at psi_k).

    The likelihood ratio q_k / p_k that replaces a module's data term is a
    fixed object produced by Bayes' rule inside the module, so its prior is
    evaluated at the module's hyperparameters and never moves with the meta.
    (For two-latent modules the blocks share one kernel.)
    """
    K = kernel_matrix(module.Z, module.Z, module.kernel)
    Lk, _ = cholesky_psd(K)
    nl, mk = module.n_latent, module.n_inducing
    big = np.zeros((nl * mk, nl * mk))
    for l in range(nl):
        big[l * mk:(l + 1) * mk, l * mk:(l + 1) * mk] = Lk
    return GaussianDist(np.zeros(nl * mk), big)


def contrastive_term(meta, module):
    """E_{q_C}[log q_k(u_k)] - E_{q_C}[log p_k(u_k)], fully closed form."""
    from .gaussians import expected_log_gaussian

    q_c = contrastive_posterior(meta, module)
    p_k = module_prior(module)
    return expected_log_gaussian(q_c, module.q_u) - expected_log_gaussian(q_c, p_k)


def meta_elbo(meta, modules, want_grads=True):
    """Module-driven bound and its gradients w.r.t. the meta state.

    Returns (value, grads) with grads over {mu, L, log_variance,
    log_lengthscales, Z}; the sum of module bounds enters as a constant
    with zero gradient.
    """
    mu_s = meta.q_u_star.mean
    L_s = meta.q_u_star.cov_chol
    return _meta_objective(meta.Z_star, mu_s, L_s, meta.kernel, modules, want_grads)


def _meta_objective(Z_star, mu_s, L_s, kernel, modules, want_grads=True):
    m = Z_star.shape[0]
    Kss = kernel_matrix(Z_star, Z_star, kernel)
    Lz, eps = cholesky_psd(Kss)
    G = chol_solve(Lz, np.eye(m))
    alpha = G @ mu_s

    kl, kl_mu, kl_L, kl_K = _prior_kl_and_grads(mu_s[None, :], L_s[None, :, :], Lz, G)
    value = float(sum(mod.elbo_star for mod in modules)) - kl
    d_mu = -kl_mu[0]
    d_S = np.zeros((m, m))
    d_K = -kl_K
    d_lv = 0.0
    d_ls = np.zeros(kernel.input_dim)
    d_Z = np.zeros_like(Z_star)

    for mod in modules:
        ct, parts = _contrastive_core(Z_star, mu_s, L_s, kernel, Lz, G, alpha, mod,
                                      want_grads)
        value += ct
        if not want_grads:
            continue
        d_mu += parts["d_mu"]
        d_S += parts["d_S"]
        d_K += parts["d_K"]
        d_lv += parts["d_lv"]
        d_ls += parts["d_ls"]
        d_Z += parts["d_Z"]

    if not want_grads:
        return value, None

    d_lv1, d_ls1, dZ1, dZ2 = kernel_vjp(Z_star, Z_star, kernel, Kss, d_K)
    d_lv += d_lv1 + eps * float(np.trace(d_K))
    d_ls += d_ls1
    d_Z += dZ1 + dZ2
    grads = {
        "mu": d_mu[None, :],
        "L": (2.0 * np.tril(d_S @ L_s) - kl_L[0])[None, :, :],
        "log_variance": d_lv,
        "log_lengthscales": d_ls,
        "Z": d_Z,
    }
    return value, grads


def _contrastive_core(Z_star, mu_s, L_s, kernel, Lz, G, alpha, module, want_grads):
    """One module's contrastive expectation, with meta-side gradients.

    The module's variational distribution and prior enter as constants; the
    meta's parameters move only through q_C = N(m_c, S_c).
    """
    _require_single_latent(module)
    B = kernel_matrix(Z_star, module.Z, kernel)
    P_star = kernel_matrix(module.Z, module.Z, kernel)  # conditional prior, meta psi
    mk = module.n_inducing

    # S_c enters the bound only through solves against the module factors,
    # so it needs no factorization (and hence no jitter) of its own
    W = chol_solve(Lz, B)
    m_c = B.T @ alpha
    U = L_s.T @ W
    S_c = P_star - B.T @ W + U.T @ U

    Lk = module.q_u.cov_chol
    Lp = module_prior(module).cov_chol
    r = m_c - module.q_u.mean
    ak = tri_solve(Lk, np.column_stack([r, S_c]))
    bk = tri_solve(Lp, np.column_stack([m_c, S_c]))
    quad_q = float(ak[:, 0] @ ak[:, 0])
    quad_p = float(bk[:, 0] @ bk[:, 0])
    Gk_Sc = tri_solve(Lk, ak[:, 1:], side="lower-transposed")
    Gp_Sc = tri_solve(Lp, bk[:, 1:], side="lower-transposed")
    logdet_k = 2.0 * float(np.sum(np.log(np.diag(Lk))))
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(Lp))))
    ct = -0.5 * (
        logdet_k - logdet_p + float(np.trace(Gk_Sc)) - float(np.trace(Gp_Sc))
        + quad_q - quad_p
    )
    if not want_grads:
        return ct, None

    Gk = chol_solve(Lk, np.eye(mk))
    Gp = chol_solve(Lp, np.eye(mk))
    g = -Gk @ r + Gp @ m_c
    H = -0.5 * (Gk - Gp)
    T = chol_solve(Lz, L_s @ U)
    WH = W @ H

    d_B = np.outer(alpha, g) + 2.0 * (T - W) @ H
    d_K = -np.outer(W @ g, alpha) + WH @ W.T - T @ H @ W.T - WH @ T.T

    d_lv_b, d_ls_b, dZ_b, _ = kernel_vjp(Z_star, module.Z, kernel, B, d_B)
    # S_c's prior block is the only P_star dependence, so its cotangent is H
    d_lv_p, d_ls_p, _, _ = kernel_vjp(module.Z, module.Z, kernel, P_star, H)
    return ct, {
        "d_mu": W @ g,
        "d_S": WH @ W.T,
        "d_K": d_K,
        "d_lv": d_lv_b + d_lv_p,
        "d_ls": d_ls_b + d_ls_p,
        "d_Z": dZ_b,
    }


def init_inducing_from_modules(modules, n_inducing, rng):
    """Seeded subset of the pooled module inducing inputs.

    The pool is the only input-space anchor available (no data); when more
    points are requested than the pool holds, duplicates are drawn and
    nudged apart deterministically.
    """
    pool = np.vstack([mod.Z for mod in modules])
    if n_inducing <= pool.shape[0]:
        pick = rng.choice(pool.shape[0], size=n_inducing, replace=False)
        return pool[np.sort(pick)].copy()
    pick = rng.choice(pool.shape[0], size=n_inducing, replace=True)
    Z = pool[np.sort(pick)].copy()
    scale = np.std(pool, axis=0)
    scale[scale == 0] = 1.0
    Z += 1e-3 * scale * rng.standard_normal(Z.shape)
    return Z


def average_kernel(modules):
    """Arithmetic mean of module log-hyperparameters."""
    lv = float(np.mean([mod.kernel.log_variance for mod in modules]))
    ls = np.mean([mod.kernel.log_lengthscales for mod in modules], axis=0)
    return KernelParams(lv, ls)


def _inherited_likelihood(modules):
    fam = modules[0].likelihood.family
    if fam == "gaussian":
        lnv = float(np.mean([mod.likelihood.log_noise_variance for mod in modules]))
        return LikelihoodSpec("gaussian", lnv)
    return LikelihoodSpec(fam)


def phase_schedule(config):
    """(iters, lr, full_params) per phase, totalling config.max_iters.

    Module posteriors are tight, so the bound around the data-free start is
    a steep canyon in the variational coordinates: fitting those first, then
    releasing hyperparameters and inducing inputs, then polishing at a lower
    rate converges an order of magnitude faster than one flat Adam run.
    """
    total = config.max_iters
    moving_hypers = config.optimize_hypers or config.optimize_inducing
    polish = total // 5
    if config.method != "adam":
        return [(total, config.learning_rate, True)]
    if not moving_hypers:
        return [(total - polish, config.learning_rate, True),
                (polish, config.learning_rate / 5.0, True)]
    warm = min(500, total // 4)
    return [(warm, config.learning_rate, False),
            (total - warm - polish, config.learning_rate, True),
            (polish, config.learning_rate / 5.0, True)]


def train_meta(modules, config, callback=None):
    """Fit a meta-GP to a validated dictionary; no dataset is ever read.

    The inputs carry no observations by construction: initialization uses
    only module inducing sets and hyperparameters, and the objective is
    meta_elbo.
    """
    modules = list(modules)
    validate_dictionary(modules, for_single_output=True)
    rng = np.random.default_rng(config.seed)
    m = config.n_inducing
    p = modules[0].input_dim

    Z0 = init_inducing_from_modules(modules, m, rng)
    kernel0 = average_kernel(modules)
    likelihood = _inherited_likelihood(modules)
    mu = np.zeros((1, m))
    Kss = kernel_matrix(Z0, Z0, kernel0)
    Lz0, _ = cholesky_psd(Kss)
    L = Lz0[None, :, :]
    kernel, Z = kernel0, Z0

    for iters, lr, full in phase_schedule(config):
        if iters <= 0:
            continue
        packer = _Packer(1, m, p, likelihood,
                         config.optimize_inducing and full,
                         config.optimize_hypers and full,
                         optimize_likelihood=False)
        x0 = packer.pack(mu, L, kernel, Z, likelihood)

        def value_and_grad(vec, packer=packer, kernel=kernel, Z=Z):
            mu_, L_, k_, Z_, _ = packer.unpack(vec, kernel, Z, likelihood)
            val, grads = _meta_objective(Z_, mu_[0], L_[0], k_, modules)
            return val, packer.pack_grads(grads, L_)

        x_opt, _ = maximize(
            value_and_grad, x0, iters, lr,
            betas=config.adam_betas, eps=config.adam_eps, rel_tol=config.rel_tol,
            method=config.method, callback=callback, track_best=True,
        )
        mu, L, kernel, Z, _ = packer.unpack(x_opt, kernel, Z, likelihood)

    return MetaGP(
        Z_star=Z,
        q_u_star=GaussianDist(mu[0], L[0]),
        kernel=kernel,
        elbo_sum_constant=float(sum(mod.elbo_star for mod in modules)),
        likelihood=likelihood,
    )


def meta_predict(meta, X_star, n_quad=N_QUAD_DEFAULT):
    """Predictive marginals of the meta-GP (same contract as module_predict)."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    means, variances, _ = _latent_marginals(
        meta.q_u_star.mean[None, :], meta.q_u_star.cov_chol[None, :, :],
        meta.kernel, meta.Z_star, X_star,
    )
    return Predictive(means, variances, meta.likelihood, n_quad)


def export_meta_as_module(meta, final_bound, n_train=0):
    """Wrap a trained meta as a module usable in a later dictionary."""
    return GPModule(
        Z=meta.Z_star.copy(),
        q_u=meta.q_u_star.copy(),
        kernel=meta.kernel.copy(),
        likelihood=meta.likelihood.copy(),
        elbo_star=float(final_bound),
        n_train=n_train,
    )
