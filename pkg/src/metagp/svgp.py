"""Sparse variational GP modules: training on one data shard, prediction.

The evidence lower bound here is the classic sparse variational one
(expected log-likelihood under the marginal posterior, minus the KL from
the variational distribution over inducing outputs to the GP prior). All
gradients are assembled analytically by the chain rule through the
closed-form Gaussian algebra; there is no autodiff tape. The
finite-difference tests in the suite guard every term.

Heteroscedastic-Gaussian data trains a module with two latent functions
sharing one kernel and inducing set; the stored variational distribution is
block-diagonal across latents.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDataWarning, DimensionMismatch, IncompatibleModules, InvariantViolation
from .gaussians import GaussianDist
from .kernels import KernelParams, kernel_diag, kernel_matrix, kernel_vjp
from .likelihoods import N_QUAD_DEFAULT, LikelihoodSpec, expected_log_lik_grads
from .linalg import DEFAULT_JITTER, cholesky_psd, chol_solve, tri_solve
from .optim import maximize
from .predictive import Predictive

__all__ = ["GPModule", "TrainConfig", "marginal_posterior", "local_elbo",
           "train_module", "module_predict"]

SCHEMA_VERSION = "1"


@dataclass
class GPModule:
    """A fitted sparse GP, self-contained and exchangeable without its data.

    q_u covers the stacked inducing outputs of all latent functions
    (dimension n_latent * M); for two-latent modules its Cholesky factor is
    block-diagonal across latents.
    """

    Z: np.ndarray
    q_u: GaussianDist
    kernel: KernelParams
    likelihood: LikelihoodSpec
    elbo_star: float
    n_train: int
    created_by: str = "metagp"

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.elbo_star = float(self.elbo_star)
        self.n_train = int(self.n_train)
        nl, m = self.likelihood.n_latent, self.Z.shape[0]
        if self.q_u.dim != nl * m:
            raise InvariantViolation(
                f"q_u dimension {self.q_u.dim} != n_latent {nl} * inducing count {m}"
            )
        if self.kernel.input_dim != self.Z.shape[1]:
            raise InvariantViolation(
                f"kernel dim {self.kernel.input_dim} != Z columns {self.Z.shape[1]}"
            )
        if not np.isfinite(self.elbo_star):
            raise InvariantViolation("elbo_star must be finite")
        if nl > 1:
            L = self.q_u.cov_chol
            for a in range(nl):
                for b in range(a):
                    if np.any(L[a * m:(a + 1) * m, b * m:(b + 1) * m] != 0.0):
                        raise InvariantViolation(
                            "cross-latent blocks of q_u.cov_chol must be zero"
                        )

    @property
    def n_inducing(self):
        return self.Z.shape[0]

    @property
    def input_dim(self):
        return self.Z.shape[1]

    @property
    def n_latent(self):
        return self.likelihood.n_latent

    def variational_blocks(self):
        """Per-latent (mu, L) views of the stacked variational state."""
        m = self.n_inducing
        mu = self.q_u.mean.reshape(self.n_latent, m)
        L = np.stack([
            self.q_u.cov_chol[l * m:(l + 1) * m, l * m:(l + 1) * m]
            for l in range(self.n_latent)
        ])
        return mu, L


@dataclass
class TrainConfig:
    """Optimization settings; every randomized step flows from `seed`."""

    n_inducing: int = 10
    max_iters: int = 2000
    batch_size: int = 0  # 0 = full batch
    learning_rate: float = 0.01
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    rel_tol: float = 1e-6
    seed: int = 0
    n_quad: int = N_QUAD_DEFAULT
    optimize_inducing: bool = True
    optimize_hypers: bool = True
    method: str = "adam"  # "gd" gives the plain-gradient ascent mode

    def __post_init__(self):
        if self.n_inducing < 1:
            raise ValueError("n_inducing must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.rel_tol < 1.0):
            raise ValueError("rel_tol must lie in [0, 1)")


# ---------------------------------------------------------------------------
# Cholesky-factor packing: strict lower triangle raw, diagonal in log domain,
# so the optimizer runs unconstrained while the factor stays valid.

def pack_chol(L):
    m = L.shape[0]
    idx = np.tril_indices(m, -1)
    return np.concatenate([L[idx], np.log(np.diag(L))])


def unpack_chol(vec, m):
    idx = np.tril_indices(m, -1)
    L = np.zeros((m, m))
    L[idx] = vec[: idx[0].size]
    L[np.diag_indices(m)] = np.exp(vec[idx[0].size:])
    return L


def chol_grad_packed(dL, L):
    m = L.shape[0]
    idx = np.tril_indices(m, -1)
    return np.concatenate([dL[idx], np.diag(dL) * np.diag(L)])


# ---------------------------------------------------------------------------
# Core algebra shared by value and gradient paths.

def _latent_marginals(mu, L, kernel, Z, X, jitter=DEFAULT_JITTER):
    """Marginal mean/variance of each latent function at the rows of X.

    Returns (means, vars, cache) where means/vars are (n_latent, N) and
    cache carries the solves reused by the gradient assembly.
    """
    Kzz = kernel_matrix(Z, Z, kernel)
    Lz, eps = cholesky_psd(Kzz, jitter)
    Kxz = kernel_matrix(X, Z, kernel)
    kxx = kernel_diag(X, kernel)
    W = chol_solve(Lz, Kxz.T)  # (M, N)
    means = mu @ W
    c = np.einsum("nm,mn->n", Kxz, W)
    U = np.einsum("lji,jn->lin", L, W)  # L_l^T W
    s = np.sum(U * U, axis=1)
    variances = np.maximum(kxx[None, :] - c[None, :] + s, 0.0)
    cache = {"Kzz": Kzz, "Lz": Lz, "eps": eps, "Kxz": Kxz, "W": W, "U": U}
    return means, variances, cache


def marginal_posterior(module, X):
    """Per-point latent marginals q(f(x)) = N(mean, var) for each latent.

    mean = k_xZ K_ZZ^-1 mu and var = k_xx + k_xZ K_ZZ^-1 (S - K_ZZ) K_ZZ^-1 k_Zx,
    with every solve running through the jittered Cholesky factor.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != module.input_dim:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, module expects {module.input_dim}")
    mu, L = module.variational_blocks()
    means, variances, _ = _latent_marginals(mu, L, module.kernel, module.Z, X)
    return means, variances


def _prior_kl_and_grads(mu, L, Lz, G):
    """KL[q(u) || N(0, Kzz)] per latent block, with gradients.

    Returns (kl, d_mu, d_L, d_Kzz) where the gradients are of the KL itself
    (caller subtracts). G is the explicit (jittered) precision used only in
    gradient matrices.
    """
    nl, m = mu.shape
    kl = 0.0
    d_mu = np.empty_like(mu)
    d_L = np.empty_like(L)
    d_K = np.zeros((m, m))
    logdet_p = 2.0 * np.sum(np.log(np.diag(Lz)))
    for l in range(nl):
        a = tri_solve(Lz, L[l])
        b = tri_solve(Lz, mu[l])
        kl += 0.5 * (
            np.sum(a * a) + b @ b - m + logdet_p - 2.0 * np.sum(np.log(np.diag(L[l])))
        )
        alpha = tri_solve(Lz, b, side="lower-transposed")
        d_mu[l] = alpha
        d_L[l] = np.tril(G @ L[l])
        d_L[l][np.diag_indices(m)] -= 1.0 / np.diag(L[l])
        V = G @ L[l]
        d_K += 0.5 * (G - V @ V.T - np.outer(alpha, alpha))
    return kl, d_mu, d_L, d_K


def local_elbo(mu, L, kernel, Z, likelihood, X, y, n_total=None,
               n_quad=N_QUAD_DEFAULT, want_grads=True):
    """Evidence lower bound of one module on a (mini)batch, with gradients.

    The data term is scaled by n_total / batch so minibatch evaluations are
    unbiased estimates of the full-batch bound. Returns (elbo, grads) with
    grads a dict over {mu, L, log_variance, log_lengthscales, Z, and any
    likelihood parameters}; grads is None when want_grads is False.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    batch = X.shape[0]
    if batch == 0:
        raise ValueError("batch must be nonempty")
    if n_total is None:
        n_total = batch
    if n_total < batch:
        raise ValueError("n_total must be >= batch size")
    scale = n_total / batch

    means, variances, cache = _latent_marginals(mu, L, kernel, Z, X)
    values, d_m, d_v, d_lik = expected_log_lik_grads(y, means, variances, likelihood, n_quad)
    Lz, W, U, Kxz, Kzz, eps = (cache["Lz"], cache["W"], cache["U"],
                               cache["Kxz"], cache["Kzz"], cache["eps"])
    m_ind = Z.shape[0]
    G = chol_solve(Lz, np.eye(m_ind))

    kl, kl_mu, kl_L, kl_K = _prior_kl_and_grads(mu, L, Lz, G)
    elbo = scale * float(np.sum(values)) - kl
    if not want_grads:
        return elbo, None

    nl = mu.shape[0]
    d_mu = np.empty_like(mu)
    d_Lg = np.empty_like(L)
    dKxz = np.zeros_like(Kxz)
    dK = -kl_K
    s2 = kernel.variance

    for l in range(nl):
        a, b = d_m[l], d_v[l]
        alpha = G @ mu[l]
        Wb = W * b[None, :]
        T = chol_solve(Lz, L[l] @ U[l])
        d_mu[l] = scale * (W @ a) - kl_mu[l]
        d_Lg[l] = scale * 2.0 * np.tril((Wb @ W.T) @ L[l]) - kl_L[l]
        dKxz += scale * (np.outer(a, alpha) + 2.0 * (b[:, None] * (T - W).T))
        dK += scale * (
            -np.outer(W @ a, alpha) + Wb @ W.T - Wb @ T.T - (T * b[None, :]) @ W.T
        )

    d_lv1, d_ls1, dZ1, dZ2 = kernel_vjp(Z, Z, kernel, Kzz, dK)
    d_lv2, d_ls2, _, dZ3 = kernel_vjp(X, Z, kernel, Kxz, dKxz)
    d_log_var = d_lv1 + d_lv2 + scale * s2 * float(np.sum(d_v)) + eps * float(np.trace(dK))
    grads = {
        "mu": d_mu,
        "L": d_Lg,
        "log_variance": d_log_var,
        "log_lengthscales": d_ls1 + d_ls2,
        "Z": dZ1 + dZ2 + dZ3,
    }
    for name, per_point in d_lik.items():
        grads[name] = scale * float(np.sum(per_point))
    return elbo, grads


# ---------------------------------------------------------------------------
# Training.

class _Packer:
    """Maps a trainer's named arrays to/from one flat optimization vector."""

    def __init__(self, nl, m, p, likelihood, optimize_inducing, optimize_hypers,
                 optimize_likelihood=True):
        self.nl, self.m, self.p = nl, m, p
        self.likelihood = likelihood
        self.opt_z = optimize_inducing
        self.opt_h = optimize_hypers
        self.opt_lik = optimize_hypers and optimize_likelihood and likelihood.family == "gaussian"
        self.tril = m * (m + 1) // 2

    def pack(self, mu, L, kernel, Z, lik):
        parts = [mu.ravel()]
        parts += [pack_chol(L[l]) for l in range(self.nl)]
        if self.opt_h:
            parts.append(np.concatenate([[kernel.log_variance], kernel.log_lengthscales]))
        if self.opt_lik:
            parts.append([lik.log_noise_variance])
        if self.opt_z:
            parts.append(Z.ravel())
        return np.concatenate([np.asarray(q, dtype=np.float64) for q in parts])

    def unpack(self, vec, kernel0, Z0, lik0):
        nl, m, p = self.nl, self.m, self.p
        i = nl * m
        mu = vec[:i].reshape(nl, m)
        L = np.empty((nl, m, m))
        for l in range(nl):
            L[l] = unpack_chol(vec[i:i + self.tril], m)
            i += self.tril
        kernel, lik, Z = kernel0, lik0, Z0
        if self.opt_h:
            kernel = KernelParams(vec[i], vec[i + 1:i + 1 + p])
            i += 1 + p
        if self.opt_lik:
            lik = LikelihoodSpec("gaussian", vec[i])
            i += 1
        if self.opt_z:
            Z = vec[i:i + m * p].reshape(m, p)
            i += m * p
        return mu, L, kernel, Z, lik

    def pack_grads(self, grads, L):
        parts = [grads["mu"].ravel()]
        parts += [chol_grad_packed(grads["L"][l], L[l]) for l in range(self.nl)]
        if self.opt_h:
            parts.append(np.concatenate([[grads["log_variance"]], grads["log_lengthscales"]]))
        if self.opt_lik:
            parts.append([grads["log_noise_variance"]])
        if self.opt_z:
            parts.append(grads["Z"].ravel())
        return np.concatenate([np.asarray(q, dtype=np.float64) for q in parts])


def _init_inducing(X, n_inducing, rng):
    """Seeded uniform subset of the distinct training inputs."""
    uniq = np.unique(X, axis=0)
    m = n_inducing
    if uniq.shape[0] < n_inducing:
        warnings.warn(
            f"only {uniq.shape[0]} distinct inputs for {n_inducing} inducing points; clamping",
            DegenerateDataWarning,
        )
        m = uniq.shape[0]
    pick = rng.choice(uniq.shape[0], size=m, replace=False)
    return uniq[np.sort(pick)].copy()


def _init_kernel(X, y, likelihood, n_inducing):
    # start lengthscales at the scale the inducing grid can resolve: a
    # prior-matched start on a much longer lengthscale makes K_ZZ nearly
    # singular and the first optimizer steps catastrophic
    p = X.shape[1]
    spread = np.std(X, axis=0) * 2.0 / max(n_inducing, 2) ** (1.0 / p)
    log_ls = np.log(np.clip(spread, 1e-3, None))
    if likelihood.family == "bernoulli":
        return KernelParams(0.0, log_ls)
    # second moment, not variance: a zero-mean GP carries any offset in the
    # signal term
    return KernelParams(np.log(max(float(np.mean(y * y)), 1e-2)), log_ls)


def _prior_chol_blocks(kernel, Z, nl):
    Kzz = kernel_matrix(Z, Z, kernel)
    Lz, _ = cholesky_psd(Kzz)
    return np.stack([Lz.copy() for _ in range(nl)])


def assemble_q_u(mu, L):
    """Stack per-latent blocks into the module's block-diagonal Gaussian."""
    nl, m = mu.shape
    big = np.zeros((nl * m, nl * m))
    for l in range(nl):
        big[l * m:(l + 1) * m, l * m:(l + 1) * m] = L[l]
    return GaussianDist(mu.ravel(), big)


def train_module(data, config, callback=None):
    """Fit one sparse variational GP module on a data shard.

    Maximizes the local bound with Adam (or plain gradient steps when
    config.method == "gd") over all unconstrained parameters; the recorded
    elbo_star is a final full-dataset evaluation, never a minibatch one.
    """
    X = np.atleast_2d(np.asarray(data.X, dtype=np.float64))
    y = np.asarray(data.y, dtype=np.float64)
    likelihood = data.likelihood_spec()
    n, p = X.shape
    nl = likelihood.n_latent
    rng = np.random.default_rng(config.seed)

    Z = _init_inducing(X, config.n_inducing, rng)
    m = Z.shape[0]
    kernel = _init_kernel(X, y, likelihood, m)
    if likelihood.family == "gaussian":
        noise0 = max(0.1 * float(np.var(y)), 1e-3 * kernel.variance, 1e-6)
        likelihood = LikelihoodSpec("gaussian", float(np.log(noise0)))
    mu = np.zeros((nl, m))
    L = _prior_chol_blocks(kernel, Z, nl)

    packer = _Packer(nl, m, p, likelihood, config.optimize_inducing, config.optimize_hypers)
    x0 = packer.pack(mu, L, kernel, Z, likelihood)

    if config.batch_size and config.batch_size < n:
        batches = _batch_stream(n, config.batch_size, rng)
    else:
        batches = None

    def value_and_grad(vec):
        mu_, L_, k_, Z_, lik_ = packer.unpack(vec, kernel, Z, likelihood)
        if batches is None:
            Xb, yb = X, y
        else:
            idx = next(batches)
            Xb, yb = X[idx], y[idx]
        val, grads = local_elbo(mu_, L_, k_, Z_, lik_, Xb, yb,
                                n_total=n, n_quad=config.n_quad)
        return val, packer.pack_grads(grads, L_)

    x_opt, _ = maximize(
        value_and_grad, x0, config.max_iters, config.learning_rate,
        betas=config.adam_betas, eps=config.adam_eps, rel_tol=config.rel_tol,
        method=config.method, callback=callback, track_best=batches is None,
    )

    mu, L, kernel, Z, likelihood = packer.unpack(x_opt, kernel, Z, likelihood)
    elbo_star, _ = local_elbo(mu, L, kernel, Z, likelihood, X, y,
                              n_total=n, n_quad=config.n_quad, want_grads=False)
    return GPModule(
        Z=Z, q_u=assemble_q_u(mu, L), kernel=kernel, likelihood=likelihood,
        elbo_star=elbo_star, n_train=n,
    )


def _batch_stream(n, batch_size, rng):
    """Endless seeded stream of minibatch index arrays (reshuffled per epoch)."""
    def gen():
        while True:
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                yield order[start:start + batch_size]
    return gen()


def module_predict(module, X_star, n_quad=N_QUAD_DEFAULT):
    """Predictive marginals of a fitted module at new inputs."""
    means, variances = marginal_posterior(module, X_star)
    return Predictive(means, variances, module.likelihood, n_quad)
