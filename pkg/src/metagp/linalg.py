"""Dense linear-algebra primitives: jittered Cholesky and triangular solves.

Every covariance factorization in the library goes through
:func:`cholesky_psd`, and every ``K^{-1} b`` product is realized with
:func:`tri_solve` on the resulting factor; explicit matrix inverses are
never formed by the solver.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .exceptions import AsymmetricInput, DimensionMismatch, NotPositiveDefinite, SingularTriangular

__all__ = ["JitterPolicy", "cholesky_psd", "tri_solve", "chol_solve"]


@dataclass(frozen=True)
class JitterPolicy:
    """Escalation schedule for the diagonal jitter added by cholesky_psd.

    Magnitudes are relative to mean(diag(A)), so the policy is scale-free.
    """

    initial: float = 1e-8
    growth: float = 10.0
    max: float = 1e-2

    def __post_init__(self):
        if not (0.0 < self.initial <= self.max):
            raise ValueError(f"require 0 < initial <= max, got {self.initial}, {self.max}")
        if self.growth <= 1.0:
            raise ValueError(f"growth must exceed 1, got {self.growth}")


DEFAULT_JITTER = JitterPolicy()


def cholesky_psd(A, policy=DEFAULT_JITTER):
    """Lower Cholesky factor of a symmetric PSD matrix, with jitter rescue.

    Tries a plain factorization first; on failure adds eps*I with eps
    escalating through the policy's relative magnitudes until LAPACK
    succeeds.

    Returns
    -------
    L : ndarray
        Lower-triangular factor with L @ L.T = A + eps * I.
    eps : float
        The jitter actually used (0.0 when A factorized unmodified).

    Raises
    ------
    AsymmetricInput
        If A deviates from symmetry by more than 1e-10 relative.
    NotPositiveDefinite
        If factorization still fails at the policy maximum.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.max(np.abs(A)), 1.0)
    if np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise AsymmetricInput("matrix is not symmetric to 1e-10 relative tolerance")

    try:
        return cholesky(A, lower=True), 0.0
    except LinAlgError:
        pass

    # Relative jitter scale; fall back to unity for an (invalid) zero diagonal
    # so escalation still terminates.
    diag_mean = float(np.mean(np.diag(A)))
    unit = diag_mean if diag_mean > 0 else 1.0
    eps = policy.initial * unit
    eps_max = policy.max * unit
    eye = np.eye(A.shape[0])
    while eps <= eps_max * (1 + 1e-12):
        try:
            return cholesky(A + eps * eye, lower=True), eps
        except LinAlgError:
            eps *= policy.growth
    raise NotPositiveDefinite(
        f"factorization failed at maximum jitter {eps_max:g} (relative {policy.max:g})"
    )


def tri_solve(L, B, side="lower"):
    """Solve L @ X = B (side='lower') or L.T @ X = B (side='lower-transposed').

    L must be square lower-triangular; the solve runs in-place LAPACK
    (dtrtrs) and never forms L^{-1}.
    """
    L = np.asarray(L, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"L must be square, got shape {L.shape}")
    if B.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"B rows {B.shape[0]} != L order {L.shape[0]}")
    if side not in ("lower", "lower-transposed"):
        raise ValueError(f"unknown side {side!r}")
    if L.shape[0] and np.min(np.abs(np.diag(L))) < 1e-300:
        raise SingularTriangular("triangular factor has a zero diagonal entry")
    return solve_triangular(L, B, lower=True, trans="T" if side == "lower-transposed" else "N")


def chol_solve(L, B):
    """Solve (L @ L.T) @ X = B with two triangular sweeps."""
    return tri_solve(L, tri_solve(L, B), side="lower-transposed")
