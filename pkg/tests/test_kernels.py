import numpy as np
import pytest

from conftest import assert_grad_close, central_diff

from metagp.backends import available_backends
from metagp.exceptions import DimensionMismatch
from metagp.kernels import (KernelParams, kernel_diag, kernel_matrix,
                            kernel_param_grads, kernel_vjp)
from metagp.linalg import cholesky_psd


class TestKernelMatrix:
    def test_single_point_gives_variance(self):
        params = KernelParams(np.log(2.5), [0.0])
        K = kernel_matrix([[1.0]], [[1.0]], params)
        np.testing.assert_allclose(K, [[2.5]], atol=1e-14)

    def test_unit_distance_hand_value(self):
        params = KernelParams(0.0, [0.0])
        K = kernel_matrix([[0.0]], [[1.0]], params)
        np.testing.assert_allclose(K, [[0.6065306597126334]], atol=1e-12)

    def test_lengthscale_saturation(self, rng):
        params = KernelParams(0.3, np.full(2, np.log(1e6)))
        X = rng.uniform(-5, 5, (4, 2))
        K = kernel_matrix(X, X, params)
        np.testing.assert_allclose(K, np.full((4, 4), np.exp(0.3)), atol=1e-6)

    def test_symmetry_and_psd(self, rng):
        params = KernelParams(0.1, rng.standard_normal(3) * 0.2)
        X = rng.standard_normal((8, 3))
        K = kernel_matrix(X, X, params)
        assert np.max(np.abs(K - K.T)) < 1e-14
        _, eps = cholesky_psd(K)
        assert eps <= 1e-8 * np.mean(np.diag(K))

    def test_stationarity(self, rng):
        params = KernelParams(0.0, rng.standard_normal(2) * 0.3)
        X1, X2 = rng.standard_normal((5, 2)), rng.standard_normal((6, 2))
        shift = rng.standard_normal(2)
        K1 = kernel_matrix(X1, X2, params)
        K2 = kernel_matrix(X1 + shift, X2 + shift, params)
        np.testing.assert_allclose(K1, K2, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kernel_matrix(np.zeros((2, 3)), np.zeros((2, 2)), KernelParams(0.0, [0.0, 0.0]))


class TestKernelDiag:
    def test_unit_variance(self, rng):
        X = rng.standard_normal((6, 2))
        np.testing.assert_allclose(kernel_diag(X, KernelParams(0.0, [0.0, 0.0])),
                                   np.ones(6))

    def test_log_two_variance(self, rng):
        X = rng.standard_normal((4, 1))
        np.testing.assert_allclose(kernel_diag(X, KernelParams(np.log(2.0), [0.0])),
                                   np.full(4, 2.0))

    def test_matches_dense_diagonal(self, rng):
        params = KernelParams(0.4, rng.standard_normal(2))
        X = rng.standard_normal((5, 2))
        np.testing.assert_allclose(kernel_diag(X, params),
                                   np.diag(kernel_matrix(X, X, params)), atol=1e-14)


class TestKernelGrads:
    def test_log_variance_grad_is_kernel(self, rng):
        params = KernelParams(0.2, rng.standard_normal(2) * 0.3)
        X1, X2 = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
        grads = kernel_param_grads(X1, X2, params)
        np.testing.assert_allclose(grads["d_log_variance"],
                                   kernel_matrix(X1, X2, params), atol=1e-14)

    def test_coincident_lengthscale_grad_vanishes(self):
        params = KernelParams(0.0, [0.1, -0.2])
        X = np.array([[0.3, -1.2], [2.0, 0.5]])
        grads = kernel_param_grads(X, X, params)
        for d in range(2):
            np.testing.assert_allclose(np.diag(grads["d_log_lengthscales"][d]),
                                       np.zeros(2), atol=1e-14)

    def test_finite_difference_oracle(self, rng):
        params = KernelParams(0.15, rng.standard_normal(3) * 0.2)
        X1 = rng.standard_normal((4, 3))
        X2 = rng.standard_normal((3, 3))
        grads = kernel_param_grads(X1, X2, params)

        fd_lv = central_diff(
            lambda t: kernel_matrix(X1, X2, KernelParams(t[0], params.log_lengthscales)).sum(),
            [params.log_variance])
        assert_grad_close(grads["d_log_variance"].sum(), fd_lv[0])

        fd_ls = central_diff(
            lambda t: kernel_matrix(X1, X2, KernelParams(params.log_variance, t)).sum(),
            params.log_lengthscales)
        assert_grad_close(grads["d_log_lengthscales"].sum(axis=(1, 2)), fd_ls, rel=1e-6)

        fd_x = central_diff(
            lambda t: kernel_matrix(t.reshape(4, 3), X2, params).sum(), X1.ravel())
        assert_grad_close(grads["d_X1"].sum(axis=1).ravel(), fd_x, rel=1e-6)


class TestBackends:
    @pytest.mark.parametrize("backend", available_backends(), ids=lambda b: b.NAME)
    def test_matrix_matches_reference_formula(self, backend, rng):
        lv = 0.3
        ls = rng.standard_normal(2) * 0.4
        X1, X2 = rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
        K = backend.sqexp_matrix(X1, X2, lv, ls)
        diff = X1[:, None, :] - X2[None, :, :]
        ref = np.exp(lv) * np.exp(-0.5 * np.sum(diff**2 / np.exp(2 * ls), axis=-1))
        np.testing.assert_allclose(K, ref, rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("backend", available_backends(), ids=lambda b: b.NAME)
    def test_vjp_matches_explicit_jacobians(self, backend, rng):
        # the fused contraction must agree with the independent forward
        # Jacobians of kernel_param_grads
        lv = -0.2
        ls = rng.standard_normal(3) * 0.3
        params = KernelParams(lv, ls)
        X1, X2 = rng.standard_normal((6, 3)), rng.standard_normal((4, 3))
        K = backend.sqexp_matrix(X1, X2, lv, ls)
        dK = rng.standard_normal(K.shape)
        d_lv, d_ls, dX1, dX2 = backend.sqexp_vjp(X1, X2, lv, ls, K, dK)
        explicit = kernel_param_grads(X1, X2, params)
        np.testing.assert_allclose(d_lv, np.sum(dK * explicit["d_log_variance"]),
                                   rtol=1e-10)
        np.testing.assert_allclose(
            d_ls, np.einsum("pnm,nm->p", explicit["d_log_lengthscales"], dK), rtol=1e-10)
        np.testing.assert_allclose(
            dX1, np.einsum("nmp,nm->np", explicit["d_X1"], dK), rtol=1e-10, atol=1e-12)
        # X2 gradient by symmetry of the kernel
        explicit_t = kernel_param_grads(X2, X1, params)
        np.testing.assert_allclose(
            dX2, np.einsum("nmp,nm->np", explicit_t["d_X1"], dK.T), rtol=1e-10, atol=1e-12)

    def test_backends_agree_pairwise(self, rng):
        backends = available_backends()
        if len(backends) < 2:
            pytest.skip("compiled backend not built")
        lv, ls = 0.1, rng.standard_normal(2)
        X1, X2 = rng.standard_normal((7, 2)), rng.standard_normal((5, 2))
        K = [b.sqexp_matrix(X1, X2, lv, ls) for b in backends]
        np.testing.assert_allclose(K[0], K[1], rtol=1e-13, atol=1e-14)
        dK = rng.standard_normal(K[0].shape)
        g0 = backends[0].sqexp_vjp(X1, X2, lv, ls, K[0], dK)
        g1 = backends[1].sqexp_vjp(X1, X2, lv, ls, K[1], dK)
        for a, b in zip(g0, g1):
            np.testing.assert_allclose(np.asarray(a), np.asarray(b),
                                       rtol=1e-12, atol=1e-13)

    def test_kernel_vjp_wrapper(self, rng):
        params = KernelParams(0.0, [0.0])
        X = rng.standard_normal((3, 1))
        K = kernel_matrix(X, X, params)
        dK = np.eye(3)
        d_lv, _, _, _ = kernel_vjp(X, X, params, K, dK)
        np.testing.assert_allclose(d_lv, np.trace(K), rtol=1e-12)
