import numpy as np
import pytest

from conftest import assert_grad_close, central_diff, random_chol

from metagp.baselines import DenseGP, dense_log_marginal
from metagp.data import Dataset, SinGeneratorSpec, gen_synthetic_sin
from metagp.exceptions import DegenerateDataWarning
from metagp.gaussians import GaussianDist
from metagp.kernels import KernelParams, kernel_matrix
from metagp.likelihoods import LikelihoodSpec, log_predictive_density
from metagp.linalg import cholesky_psd
from metagp.svgp import (GPModule, TrainConfig, _Packer, assemble_q_u, local_elbo,
                         marginal_posterior, module_predict, train_module)


def prior_module(Z, kernel, likelihood):
    """Module whose variational state equals its prior at the kernel."""
    Lz, _ = cholesky_psd(kernel_matrix(Z, Z, kernel))
    nl = likelihood.n_latent
    mu = np.zeros((nl, Z.shape[0]))
    L = np.stack([Lz.copy() for _ in range(nl)])
    return GPModule(Z=Z, q_u=assemble_q_u(mu, L), kernel=kernel,
                    likelihood=likelihood, elbo_star=0.0, n_train=10)


class TestMarginalPosterior:
    def test_prior_state_recovers_prior(self, rng):
        Z = rng.standard_normal((5, 2))
        kernel = KernelParams(0.3, rng.standard_normal(2) * 0.2)
        mod = prior_module(Z, kernel, LikelihoodSpec("gaussian", -1.0))
        means, variances = marginal_posterior(mod, Z)
        np.testing.assert_allclose(means, np.zeros((1, 5)), atol=1e-9)
        np.testing.assert_allclose(variances[0], np.diag(kernel_matrix(Z, Z, kernel)),
                                   atol=1e-7)

    def test_scalar_hand_formula(self):
        # single inducing point in 1-D: everything is scalar algebra
        z, x = 0.5, 1.3
        lv, ls = 0.2, -0.1
        mu, ell = 0.7, 0.6
        kernel = KernelParams(lv, [ls])
        q_u = GaussianDist([mu], [[ell]])
        mod = GPModule(Z=[[z]], q_u=q_u, kernel=kernel,
                       likelihood=LikelihoodSpec("gaussian", -1.0),
                       elbo_star=0.0, n_train=5)
        means, variances = marginal_posterior(mod, [[x]])
        s2 = np.exp(lv)
        kxz = s2 * np.exp(-0.5 * (x - z) ** 2 / np.exp(2 * ls))
        np.testing.assert_allclose(means[0, 0], kxz / s2 * mu, rtol=1e-12)
        expected_var = s2 + kxz / s2 * (ell**2 - s2) / s2 * kxz
        np.testing.assert_allclose(variances[0, 0], expected_var, rtol=1e-10)

    def test_far_field_reverts_to_prior(self, rng):
        Z = rng.uniform(-1, 1, (4, 1))
        kernel = KernelParams(0.4, [np.log(0.5)])
        q_u = GaussianDist(rng.standard_normal(4), random_chol(rng, 4))
        mod = GPModule(Z=Z, q_u=q_u, kernel=kernel,
                       likelihood=LikelihoodSpec("gaussian", -1.0),
                       elbo_star=0.0, n_train=5)
        means, variances = marginal_posterior(mod, [[500.0]])
        assert abs(means[0, 0]) < 1e-6
        np.testing.assert_allclose(variances[0, 0], kernel.variance, atol=1e-6)


class TestLocalElbo:
    def test_zero_kl_state_equals_scaled_data_term(self, rng):
        from metagp.likelihoods import expected_log_lik

        Z = rng.standard_normal((4, 1))
        kernel = KernelParams(0.1, [0.2])
        lik = LikelihoodSpec("gaussian", -0.5)
        mod = prior_module(Z, kernel, lik)
        X = rng.standard_normal((6, 1))
        y = rng.standard_normal(6)
        mu, L = mod.variational_blocks()
        val, _ = local_elbo(mu, L, kernel, Z, lik, X, y, want_grads=False)
        means, variances = marginal_posterior(mod, X)
        expected = float(np.sum(expected_log_lik(y, means, variances, lik)))
        np.testing.assert_allclose(val, expected, atol=1e-8)

    def test_never_exceeds_dense_log_marginal_small(self, rng):
        # N = 3 toy: bound <= exact evidence at the same hyperparameters
        X = rng.standard_normal((3, 1))
        y = rng.standard_normal(3)
        kernel = KernelParams(0.2, [0.1])
        lik = LikelihoodSpec("gaussian", -0.7)
        mu = rng.standard_normal((1, 3)) * 0.3
        L = random_chol(rng, 3)[None]
        val, _ = local_elbo(mu, L, kernel, X, lik, X, y, want_grads=False)
        dense = dense_log_marginal(DenseGP(X, y, kernel, lik.log_noise_variance))
        assert val <= dense + 1e-9

    def test_bound_property_many_seeds(self):
        # inducing set = a subset of inputs, arbitrary variational state
        for seed in range(20):
            r = np.random.default_rng(seed)
            n = int(r.integers(5, 60))
            X = r.uniform(-3, 3, (n, 1))
            y = np.sin(X[:, 0]) + 0.3 * r.standard_normal(n)
            kernel = KernelParams(float(r.normal(0, 0.3)), [float(r.normal(0, 0.3))])
            lik = LikelihoodSpec("gaussian", float(r.normal(-1, 0.3)))
            m = int(r.integers(2, min(8, n)))
            Z = X[r.choice(n, m, replace=False)]
            mu = r.standard_normal((1, m)) * 0.5
            L = random_chol(r, m)[None]
            val, _ = local_elbo(mu, L, kernel, Z, lik, X, y, want_grads=False)
            dense = dense_log_marginal(DenseGP(X, y, kernel, lik.log_noise_variance))
            assert val <= dense + 1e-6

    @pytest.mark.parametrize("family", ["gaussian", "bernoulli", "het_gaussian"])
    def test_gradients_match_finite_differences(self, family, rng):
        lik = LikelihoodSpec(family, -1.0 if family == "gaussian" else None)
        nl = lik.n_latent
        m, batch, p = 3, 8, 2
        mu = rng.standard_normal((nl, m)) * 0.5
        L = np.stack([random_chol(rng, m) for _ in range(nl)])
        kernel = KernelParams(0.2, rng.standard_normal(p) * 0.3)
        Z = rng.standard_normal((m, p))
        X = rng.standard_normal((batch, p))
        y = ((rng.uniform(size=batch) < 0.5).astype(float)
             if family == "bernoulli" else rng.standard_normal(batch))
        packer = _Packer(nl, m, p, lik, True, True)
        x0 = packer.pack(mu, L, kernel, Z, lik)

        def value(vec):
            args = packer.unpack(vec, kernel, Z, lik)
            return local_elbo(*args, X, y, n_total=20, want_grads=False)[0]

        _, grads = local_elbo(*packer.unpack(x0, kernel, Z, lik), X, y, n_total=20)
        analytic = packer.pack_grads(grads, L)
        assert_grad_close(analytic, central_diff(value, x0), rel=1e-4)

    def test_permutation_invariance(self, rng):
        m = 5
        mu = rng.standard_normal((1, m))
        L = random_chol(rng, m)[None]
        kernel = KernelParams(0.1, [0.0])
        Z = rng.standard_normal((m, 1))
        lik = LikelihoodSpec("gaussian", -1.0)
        X, y = rng.standard_normal((7, 1)), rng.standard_normal(7)
        val, _ = local_elbo(mu, L, kernel, Z, lik, X, y, want_grads=False)
        perm = rng.permutation(m)
        S = (L[0] @ L[0].T)[np.ix_(perm, perm)]
        Lp, _ = cholesky_psd(S)
        val2, _ = local_elbo(mu[:, perm], Lp[None], kernel, Z[perm], lik, X, y,
                             want_grads=False)
        np.testing.assert_allclose(val, val2, atol=1e-10)

    def test_minibatch_estimator_unbiased(self, rng):
        # disjoint equal batches: the mean of scaled estimates equals the
        # full-batch value (KL is constant, the data term is a plain sum)
        n, b, m = 12, 3, 4
        X, y = rng.standard_normal((n, 1)), rng.standard_normal(n)
        mu = rng.standard_normal((1, m))
        L = random_chol(rng, m)[None]
        kernel = KernelParams(0.0, [0.0])
        Z = rng.standard_normal((m, 1))
        lik = LikelihoodSpec("gaussian", -0.5)
        full, _ = local_elbo(mu, L, kernel, Z, lik, X, y, want_grads=False)
        parts = [local_elbo(mu, L, kernel, Z, lik, X[i:i + b], y[i:i + b],
                            n_total=n, want_grads=False)[0]
                 for i in range(0, n, b)]
        np.testing.assert_allclose(np.mean(parts), full, atol=1e-10)


class TestTrainModule:
    def test_constant_data(self):
        r = np.random.default_rng(0)
        X = r.uniform(-1, 1, (40, 1))
        data = Dataset(X, np.full(40, 3.0), "gaussian")
        cfg = TrainConfig(n_inducing=5, max_iters=3000, learning_rate=0.1, seed=0)
        mod = train_module(data, cfg)
        pred = module_predict(mod, X)
        np.testing.assert_allclose(pred.y_mean(), np.full(40, 3.0), atol=1e-2)
        assert mod.likelihood.noise_variance < 0.05

    def test_plain_gradient_monotone_ascent(self):
        data = gen_synthetic_sin(SinGeneratorSpec(seed=11, noise_std=0.3), 30)
        history = []
        cfg = TrainConfig(n_inducing=4, max_iters=60, learning_rate=1e-4, seed=1,
                          method="gd", rel_tol=0.0)
        train_module(data, cfg, callback=lambda it, val, x: history.append(val))
        diffs = np.diff(np.array(history))
        assert np.all(diffs >= -1e-10)

    def test_degenerate_data_clamps_inducing(self):
        X = np.repeat([[0.0], [1.0], [2.0]], 5, axis=0)
        data = Dataset(X, np.zeros(15), "gaussian")
        cfg = TrainConfig(n_inducing=10, max_iters=5, seed=0)
        with pytest.warns(DegenerateDataWarning):
            mod = train_module(data, cfg)
        assert mod.n_inducing == 3

    def test_elbo_star_is_full_dataset_value(self):
        data = gen_synthetic_sin(SinGeneratorSpec(seed=2), 60)
        cfg = TrainConfig(n_inducing=6, max_iters=300, batch_size=16,
                          learning_rate=0.02, seed=3)
        mod = train_module(data, cfg)
        mu, L = mod.variational_blocks()
        val, _ = local_elbo(mu, L, mod.kernel, mod.Z, mod.likelihood,
                            data.X, data.y, want_grads=False)
        np.testing.assert_allclose(mod.elbo_star, val, atol=1e-10)


class TestModulePredict:
    def test_prior_far_field_gaussian_variance(self, rng):
        kernel = KernelParams(0.3, [0.0])
        lik = LikelihoodSpec("gaussian", -0.4)
        mod = prior_module(rng.uniform(-1, 1, (4, 1)), kernel, lik)
        pred = module_predict(mod, [[90.0]])
        np.testing.assert_allclose(pred.y_var()[0],
                                   kernel.variance + lik.noise_variance, atol=1e-8)

    def test_bernoulli_centered_probability(self, rng):
        kernel = KernelParams(0.0, [0.0])
        mod = prior_module(rng.uniform(-1, 1, (4, 1)), kernel, LikelihoodSpec("bernoulli"))
        pred = module_predict(mod, [[50.0]])
        np.testing.assert_allclose(pred.prob()[0], 0.5, atol=1e-10)

    def test_log_density_self_consistency(self, rng):
        data = gen_synthetic_sin(SinGeneratorSpec(seed=5), 50)
        mod = train_module(data, TrainConfig(n_inducing=5, max_iters=200, seed=1))
        Xs = rng.uniform(-10, 10, (6, 1))
        ys = rng.standard_normal(6)
        pred = module_predict(mod, Xs)
        direct = log_predictive_density(ys, pred.latent_means, pred.latent_vars,
                                        mod.likelihood)
        np.testing.assert_allclose(pred.log_density(ys), direct, atol=1e-12)
