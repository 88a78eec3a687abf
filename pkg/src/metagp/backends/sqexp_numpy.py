"""Pure-numpy implementation of the squared-exponential hot kernels.

Same contract as the compiled extension in ``_sqexp.pyx``: the two entry
points below are the per-iteration hot loop of every trainer, so they avoid
python-level loops over matrix entries and keep temporaries to a minimum.
"""

import numpy as np

NAME = "numpy"


def sqexp_matrix(X1, X2, log_variance, log_lengthscales):
    """Cross-covariance matrix K[i, j] = s2 * exp(-0.5 sum_d (d_ijd / l_d)^2)."""
    ls = np.exp(log_lengthscales)
    A = X1 / ls
    B = X2 / ls
    # squared distances via the expanded product; clip tiny negatives from
    # cancellation so coincident points give exactly exp(0)
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(log_variance) * np.exp(-0.5 * d2)


def sqexp_vjp(X1, X2, log_variance, log_lengthscales, K, dK):
    """Reverse-mode contraction of dK against the kernel's parameters.

    Given the forward matrix K = sqexp_matrix(...) and a cotangent dK of the
    same shape, returns the tuple

        (d_log_variance, d_log_lengthscales, dX1, dX2)

    i.e. the gradients of sum(dK * K) with respect to each input.
    """
    P = dK * K
    inv_l2 = np.exp(-2.0 * np.asarray(log_lengthscales))
    d_lv = float(np.sum(P))

    p = X1.shape[1]
    d_ls = np.empty(p)
    dX1 = np.empty_like(X1)
    dX2 = np.empty_like(X2)
    row = np.sum(P, axis=1)
    col = np.sum(P, axis=0)
    for d in range(p):
        x1 = X1[:, d]
        x2 = X2[:, d]
        px2 = P @ x2
        ptx1 = P.T @ x1
        # sum_ij P_ij (x1_i - x2_j)^2 / l_d^2, expanded to avoid the NxM temp
        quad = row @ (x1 * x1) - 2.0 * (x1 @ px2) + col @ (x2 * x2)
        d_ls[d] = inv_l2[d] * quad
        dX1[:, d] = -inv_l2[d] * (row * x1 - px2)
        dX2[:, d] = -inv_l2[d] * (col * x2 - ptx1)
    return d_lv, d_ls, dX1, dX2
