"""Multi-output meta-GP under a linear model of coregionalisation.

Q independent latent GPs share one global inducing set; each module output
is a fixed linear combination of them, so correlations between modules are
learned a posteriori through the mixing matrix. Heteroscedastic modules
bind two output rows (mean and log-variance latents); the contrastive
algebra below treats a module's stacked inducing outputs as one Gaussian
block built from the per-latent cross-covariances.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import IncompatibleModules, IndexOutOfRange
from .gaussians import GaussianDist
from .kernels import KernelParams, kernel_diag, kernel_matrix, kernel_vjp
from .likelihoods import N_QUAD_DEFAULT
from .linalg import cholesky_psd, chol_solve, tri_solve
from .meta import average_kernel, init_inducing_from_modules, module_prior, phase_schedule
from .module_io import validate_dictionary
from .optim import maximize
from .predictive import Predictive
from .svgp import chol_grad_packed, pack_chol, unpack_chol, _prior_kl_and_grads

__all__ = ["LMCConfig", "MOMetaGP", "lmc_cross_cov", "mo_contrastive_posterior",
           "mo_meta_elbo", "train_mo_meta", "mo_predict"]


@dataclass
class LMCConfig:
    """Mixing structure: Q latent functions, R_q i.i.d. samples per latent,
    coefficient matrix A (one row per output), one kernel per latent."""

    Q: int
    R: tuple = None
    A: np.ndarray = None
    latent_kernels: list = None

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        self.R = tuple(self.R) if self.R is not None else (1,) * self.Q
        if len(self.R) != self.Q or any(r < 1 for r in self.R):
            raise ValueError("R must hold Q entries, all >= 1")
        if self.A is not None:
            self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
            if self.A.shape[1] != sum(self.R):
                raise ValueError(
                    f"A has {self.A.shape[1]} columns, expected sum(R) = {sum(self.R)}"
                )

    @property
    def n_components(self):
        return sum(self.R)

    def component_latents(self):
        """Latent index q of each flattened coefficient column."""
        return [q for q in range(self.Q) for _ in range(self.R[q])]


def lmc_cross_cov(lmc, k, X1, X2):
    """Output and output-to-latent cross-covariances for output row k.

    Returns {"output": K_ff, "latent": [K_fv per flattened component]},
    with K_ff = sum over components of a^2 k_q(X1, X2) and
    K_fv = a k_q(X1, X2) (i.i.d. latent samples are independent).
    """
    if lmc.A is None or lmc.latent_kernels is None:
        raise ValueError("lmc_cross_cov needs concrete A and latent_kernels")
    if not 0 <= k < lmc.A.shape[0]:
        raise IndexOutOfRange(f"output index {k} outside 0..{lmc.A.shape[0] - 1}")
    comps = lmc.component_latents()
    per_latent = {q: kernel_matrix(X1, X2, lmc.latent_kernels[q]) for q in set(comps)}
    latent_blocks = []
    K_ff = None
    for j, q in enumerate(comps):
        a = lmc.A[k, j]
        latent_blocks.append(a * per_latent[q])
        K_ff = (a * a) * per_latent[q] if K_ff is None else K_ff + (a * a) * per_latent[q]
    return {"output": K_ff, "latent": latent_blocks}


@dataclass
class MOMetaGP:
    """Q latent variational states plus the LMC wiring of module outputs."""

    Z_star: np.ndarray
    q_v: list
    lmc: LMCConfig
    output_likelihoods: list
    elbo_sum_constant: float = 0.0

    def __post_init__(self):
        self.Z_star = np.atleast_2d(np.asarray(self.Z_star, dtype=np.float64))
        if len(self.q_v) != self.lmc.Q:
            raise ValueError("need one variational state per latent")
        for q_dist in self.q_v:
            if q_dist.dim != self.Z_star.shape[0]:
                raise ValueError("each latent state must match the Z_star row count")

    @property
    def n_outputs(self):
        return len(self.output_likelihoods)

    def row_slices(self):
        """Rows of A bound to each output (het modules take two)."""
        out, offset = [], 0
        for lik in self.output_likelihoods:
            out.append(list(range(offset, offset + lik.n_latent)))
            offset += lik.n_latent
        return out


def _require_single_sample(lmc):
    if any(r != 1 for r in lmc.R):
        raise IncompatibleModules(
            "the meta training path supports one sample per latent (all R_q = 1); "
            "general R is available in lmc_cross_cov only"
        )


def _check_rows(meta, modules):
    rows = sum(mod.n_latent for mod in modules)
    if meta.lmc.A is None or meta.lmc.A.shape[0] != rows:
        raise IncompatibleModules(
            f"A has {None if meta.lmc.A is None else meta.lmc.A.shape[0]} rows, "
            f"modules require {rows}"
        )


class _LatentCache:
    """Per-latent global factors shared by every module term."""

    def __init__(self, Z_star, lmc, q_v):
        self.Kq, self.Lz, self.eps, self.G, self.alpha = [], [], [], [], []
        m = Z_star.shape[0]
        for q in range(lmc.Q):
            Kq = kernel_matrix(Z_star, Z_star, lmc.latent_kernels[q])
            Lz, eps = cholesky_psd(Kq)
            G = chol_solve(Lz, np.eye(m))
            self.Kq.append(Kq)
            self.Lz.append(Lz)
            self.eps.append(eps)
            self.G.append(G)
            self.alpha.append(G @ q_v[q].mean)


def _module_moments(Z_star, lmc, q_v, cache, module, rows):
    """m_C, S_C and the per-latent solves for one module's stacked u_k."""
    mk = module.n_inducing
    d = len(rows) * mk
    m_c = np.zeros(d)
    S_c = np.zeros((d, d))
    per_latent = []
    Kq_kk_all = []
    for q in range(lmc.Q):
        a_rows = lmc.A[rows, q]
        Cq = kernel_matrix(Z_star, module.Z, lmc.latent_kernels[q])  # (M, mk)
        Kq_kk = kernel_matrix(module.Z, module.Z, lmc.latent_kernels[q])
        Kq_kk_all.append(Kq_kk)
        B = np.hstack([a * Cq for a in a_rows])  # (M, d)
        W = chol_solve(cache.Lz[q], B)
        U = q_v[q].cov_chol.T @ W
        m_c += B.T @ cache.alpha[q]
        S_c += U.T @ U - B.T @ W
        per_latent.append({"Cq": Cq, "B": B, "W": W, "U": U})
        outer = np.outer(a_rows, a_rows)
        S_c += np.kron(outer, Kq_kk)
    return m_c, S_c, per_latent, Kq_kk_all


def mo_contrastive_posterior(meta, module, k):
    """q_C over module k's stacked inducing outputs under the LMC meta."""
    _require_single_sample(meta.lmc)
    rows = meta.row_slices()[_check_output_index(meta, k)]
    cache = _LatentCache(meta.Z_star, meta.lmc, meta.q_v)
    m_c, S_c, _, _ = _module_moments(meta.Z_star, meta.lmc, meta.q_v, cache, module, rows)
    Lc, _ = cholesky_psd(0.5 * (S_c + S_c.T))
    return GaussianDist(m_c, Lc)


def _check_output_index(meta, k):
    if not 0 <= k < meta.n_outputs:
        raise IndexOutOfRange(f"output index {k} outside 0..{meta.n_outputs - 1}")
    return k


def mo_meta_elbo(meta, modules, want_grads=True):
    """Multi-output module-driven bound with gradients.

    grads covers {mu_q, L_q, kernel_q (log domain), Z, A}; the module-bound
    sum is a zero-gradient constant as in the single-output case.
    """
    _require_single_sample(meta.lmc)
    _check_rows(meta, modules)
    return _mo_objective(meta.Z_star, meta.q_v, meta.lmc, modules,
                         meta.row_slices(), want_grads)


def _mo_objective(Z_star, q_v, lmc, modules, row_slices, want_grads=True):
    Q = lmc.Q
    m = Z_star.shape[0]
    p = Z_star.shape[1]
    cache = _LatentCache(Z_star, lmc, q_v)

    value = float(sum(mod.elbo_star for mod in modules))
    d_mu = [np.zeros(m) for _ in range(Q)]
    d_S = [np.zeros((m, m)) for _ in range(Q)]
    d_Kq = [np.zeros((m, m)) for _ in range(Q)]
    d_lv = np.zeros(Q)
    d_ls = [np.zeros(p) for _ in range(Q)]
    d_Z = np.zeros_like(Z_star)
    d_A = np.zeros_like(lmc.A)

    # prior KL, one term per latent
    kl_L_terms = []
    for q in range(Q):
        kl, kl_mu, kl_L, kl_K = _prior_kl_and_grads(
            q_v[q].mean[None, :], q_v[q].cov_chol[None, :, :], cache.Lz[q], cache.G[q]
        )
        value -= kl
        kl_L_terms.append(kl_L[0])
        if want_grads:
            d_mu[q] -= kl_mu[0]
            d_Kq[q] -= kl_K

    for mod, rows in zip(modules, row_slices):
        mk = mod.n_inducing
        m_c, S_c, per_latent, Kq_kk_all = _module_moments(Z_star, lmc, q_v, cache, mod, rows)
        d = m_c.shape[0]

        Lk = mod.q_u.cov_chol
        Lp = module_prior(mod).cov_chol  # module's own prior: a constant
        r = m_c - mod.q_u.mean
        ak = tri_solve(Lk, np.column_stack([r, S_c]))
        bk = tri_solve(Lp, np.column_stack([m_c, S_c]))
        Gk_Sc = tri_solve(Lk, ak[:, 1:], side="lower-transposed")
        Gp_Sc = tri_solve(Lp, bk[:, 1:], side="lower-transposed")
        logdet_k = 2.0 * float(np.sum(np.log(np.diag(Lk))))
        logdet_p = 2.0 * float(np.sum(np.log(np.diag(Lp))))
        ct = -0.5 * (
            logdet_k - logdet_p + float(np.trace(Gk_Sc)) - float(np.trace(Gp_Sc))
            + float(ak[:, 0] @ ak[:, 0]) - float(bk[:, 0] @ bk[:, 0])
        )
        value += ct
        if not want_grads:
            continue

        Gk = chol_solve(Lk, np.eye(d))
        Gp = chol_solve(Lp, np.eye(d))
        g = -Gk @ r + Gp @ m_c
        H = -0.5 * (Gk - Gp)

        for q in range(Q):
            a_rows = lmc.A[rows, q]
            pl = per_latent[q]
            W, U, B, Cq = pl["W"], pl["U"], pl["B"], pl["Cq"]
            T = chol_solve(cache.Lz[q], q_v[q].cov_chol @ U)
            WH = W @ H
            d_mu[q] += W @ g
            d_S[q] += WH @ W.T
            d_Kq[q] += (-np.outer(W @ g, cache.alpha[q]) + WH @ W.T
                        - T @ H @ W.T - WH @ T.T)
            d_B = np.outer(cache.alpha[q], g) + 2.0 * (T - W) @ H

            d_Cq = np.zeros_like(Cq)
            Kq_kk = Kq_kk_all[q]
            d_Kq_kk = np.zeros_like(Kq_kk)
            for i, row in enumerate(rows):
                blk = d_B[:, i * mk:(i + 1) * mk]
                d_Cq += a_rows[i] * blk
                d_A[row, q] += float(np.sum(blk * Cq))
                for j, row_j in enumerate(rows):
                    # S_c's prior block is the only dependence on K_q(Z_k, Z_k)
                    # and on A through it, so its cotangent is H
                    dP_blk = H[i * mk:(i + 1) * mk, j * mk:(j + 1) * mk]
                    d_Kq_kk += a_rows[i] * a_rows[j] * dP_blk
                    d_A[row, q] += 2.0 * a_rows[j] * float(np.sum(dP_blk * Kq_kk))

            d_lv_c, d_ls_c, dZ_c, _ = kernel_vjp(Z_star, mod.Z, lmc.latent_kernels[q], Cq, d_Cq)
            d_lv_p, d_ls_p, _, _ = kernel_vjp(mod.Z, mod.Z, lmc.latent_kernels[q], Kq_kk, d_Kq_kk)
            d_lv[q] += d_lv_c + d_lv_p
            d_ls[q] += d_ls_c + d_ls_p
            d_Z += dZ_c

    if not want_grads:
        return value, None

    grads_L = []
    for q in range(Q):
        d_lv_k, d_ls_k, dZ1, dZ2 = kernel_vjp(Z_star, Z_star, lmc.latent_kernels[q],
                                              cache.Kq[q], d_Kq[q])
        d_lv[q] += d_lv_k + cache.eps[q] * float(np.trace(d_Kq[q]))
        d_ls[q] += d_ls_k
        d_Z += dZ1 + dZ2
        grads_L.append(2.0 * np.tril(d_S[q] @ q_v[q].cov_chol) - kl_L_terms[q])
    grads = {
        "mu": d_mu,
        "L": grads_L,
        "log_variance": d_lv,
        "log_lengthscales": d_ls,
        "Z": d_Z,
        "A": d_A,
    }
    return value, grads


# ---------------------------------------------------------------------------
# Training.

class _MOPacker:
    def __init__(self, Q, m, p, n_rows, optimize_inducing, optimize_hypers):
        self.Q, self.m, self.p, self.n_rows = Q, m, p, n_rows
        self.opt_z = optimize_inducing
        self.opt_h = optimize_hypers
        self.tril = m * (m + 1) // 2

    def pack(self, mu, L, kernels, Z, A):
        parts = []
        for q in range(self.Q):
            parts.append(mu[q])
            parts.append(pack_chol(L[q]))
            if self.opt_h:
                parts.append(np.concatenate([[kernels[q].log_variance],
                                             kernels[q].log_lengthscales]))
        if self.opt_z:
            parts.append(Z.ravel())
        parts.append(A.ravel())
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in parts])

    def unpack(self, vec, kernels0, Z0):
        Q, m, p = self.Q, self.m, self.p
        mu, L, kernels = [], [], []
        i = 0
        for q in range(Q):
            mu.append(vec[i:i + m]);  i += m
            L.append(unpack_chol(vec[i:i + self.tril], m));  i += self.tril
            if self.opt_h:
                kernels.append(KernelParams(vec[i], vec[i + 1:i + 1 + p]));  i += 1 + p
            else:
                kernels.append(kernels0[q])
        Z = Z0
        if self.opt_z:
            Z = vec[i:i + m * p].reshape(m, p);  i += m * p
        A = vec[i:i + self.n_rows * Q].reshape(self.n_rows, Q)
        return mu, L, kernels, Z, A

    def pack_grads(self, grads, L):
        parts = []
        for q in range(self.Q):
            parts.append(grads["mu"][q])
            parts.append(chol_grad_packed(grads["L"][q], L[q]))
            if self.opt_h:
                parts.append(np.concatenate([[grads["log_variance"][q]],
                                             grads["log_lengthscales"][q]]))
        if self.opt_z:
            parts.append(grads["Z"].ravel())
        parts.append(grads["A"].ravel())
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in parts])


def train_mo_meta(modules, lmc_init, config, callback=None):
    """Fit a multi-output meta-GP; modules may mix likelihood families.

    A missing coefficient matrix is initialized from seeded unit draws
    scaled by 1/sqrt(Q); missing latent kernels start at the module average.
    No observation enters at any point.
    """
    modules = list(modules)
    validate_dictionary(modules)
    _require_single_sample(lmc_init)
    rng = np.random.default_rng(config.seed)
    Q = lmc_init.Q
    m = config.n_inducing
    p = modules[0].input_dim
    n_rows = sum(mod.n_latent for mod in modules)

    A0 = lmc_init.A
    if A0 is None:
        A0 = rng.standard_normal((n_rows, Q)) / np.sqrt(Q)
    elif A0.shape[0] != n_rows:
        raise IncompatibleModules(f"A has {A0.shape[0]} rows, modules require {n_rows}")
    kernels0 = lmc_init.latent_kernels
    if kernels0 is None:
        kernels0 = [average_kernel(modules) for _ in range(Q)]

    Z0 = init_inducing_from_modules(modules, m, rng)
    mu0 = [np.zeros(m) for _ in range(Q)]
    L0 = []
    for q in range(Q):
        Kq = kernel_matrix(Z0, Z0, kernels0[q])
        Lz, _ = cholesky_psd(Kq)
        L0.append(Lz)

    row_slices, offset = [], 0
    for mod in modules:
        row_slices.append(list(range(offset, offset + mod.n_latent)))
        offset += mod.n_latent

    mu, L, kernels, Z, A = mu0, L0, kernels0, Z0, A0
    for iters, lr, full in phase_schedule(config):
        if iters <= 0:
            continue
        packer = _MOPacker(Q, m, p, n_rows,
                           config.optimize_inducing and full,
                           config.optimize_hypers and full)
        x0 = packer.pack(mu, L, kernels, Z, A)

        def value_and_grad(vec, packer=packer, kernels=kernels, Z=Z):
            mu_, L_, kernels_, Z_, A_ = packer.unpack(vec, kernels, Z)
            q_v = [GaussianDist(mu_[q], L_[q]) for q in range(Q)]
            lmc = LMCConfig(Q=Q, R=(1,) * Q, A=A_, latent_kernels=kernels_)
            val, grads = _mo_objective(Z_, q_v, lmc, modules, row_slices)
            return val, packer.pack_grads(grads, L_)

        x_opt, _ = maximize(
            value_and_grad, x0, iters, lr,
            betas=config.adam_betas, eps=config.adam_eps, rel_tol=config.rel_tol,
            method=config.method, callback=callback, track_best=True,
        )
        mu, L, kernels, Z, A = packer.unpack(x_opt, kernels, Z)

    return MOMetaGP(
        Z_star=Z,
        q_v=[GaussianDist(mu[q], L[q]) for q in range(Q)],
        lmc=LMCConfig(Q=Q, R=(1,) * Q, A=A, latent_kernels=kernels),
        output_likelihoods=[mod.likelihood.copy() for mod in modules],
        elbo_sum_constant=float(sum(mod.elbo_star for mod in modules)),
    )


def mo_predict(meta, k, X_star, n_quad=N_QUAD_DEFAULT):
    """Predictive marginals for output k, mapped through its likelihood.

    For a heteroscedastic output the two bound rows supply the mean and
    log-variance latent marginals.
    """
    _require_single_sample(meta.lmc)
    k = _check_output_index(meta, k)
    rows = meta.row_slices()[k]
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    n = X_star.shape[0]
    means = np.zeros((len(rows), n))
    variances = np.zeros((len(rows), n))
    for q in range(meta.lmc.Q):
        kq = meta.lmc.latent_kernels[q]
        Kq = kernel_matrix(meta.Z_star, meta.Z_star, kq)
        Lz, _ = cholesky_psd(Kq)
        Cx = kernel_matrix(X_star, meta.Z_star, kq)  # (n, M)
        W = chol_solve(Lz, Cx.T)  # (M, n)
        lat_mean = W.T @ meta.q_v[q].mean
        U = meta.q_v[q].cov_chol.T @ W
        lat_var = kernel_diag(X_star, kq) - np.einsum("nm,mn->n", Cx, W) + np.sum(U * U, axis=0)
        lat_var = np.maximum(lat_var, 0.0)
        for i, row in enumerate(rows):
            a = meta.lmc.A[row, q]
            means[i] += a * lat_mean
            variances[i] += (a * a) * lat_var
    return Predictive(means, variances, meta.output_likelihoods[k], n_quad)


def output_correlation(lmc):
    """Normalized output covariance induced by A and the latent variances."""
    comps = lmc.component_latents()
    var = np.array([lmc.latent_kernels[q].variance for q in comps])
    cov = (lmc.A * var[None, :]) @ lmc.A.T
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)
