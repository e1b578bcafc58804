"""Small dense linear algebra: Hermitian PD solves and Perron power iteration."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ContractError, ConvergenceError, ShapeError, SingularMatrixError


def hpd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for Hermitian positive-definite ``A`` via Cholesky."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ShapeError(f"hpd_solve shapes {A.shape} and {B.shape} do not conform")
    scale = np.abs(A).sum(axis=1).max()
    if np.abs(A - A.conj().T).sum(axis=1).max() > 1e-10 * scale:
        raise ContractError("matrix is not Hermitian")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("non-positive pivot in Cholesky factorisation") from exc
    return scipy.linalg.cho_solve(factor, B)


def power_iteration_max_eig(G: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000,
                            start: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of an entrywise nonnegative matrix.

    Returns ``(lam, x)`` with ``x`` scaled so its last entry is 1.  Iteration
    stops once the eigenvalue estimate has changed by at most ``tol``
    (relative) for three consecutive steps and the residual
    ``||G x - lam x||_inf`` is at most ``1e-10 * lam``.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ShapeError(f"square matrix required, got {G.shape}")
    if np.any(G < 0):
        raise ContractError("matrix must be entrywise nonnegative")
    n = G.shape[0]
    x = np.ones(n) if start is None else np.asarray(start, dtype=np.float64).copy()
    if np.any(x <= 0):
        raise ContractError("start vector must be strictly positive")
    x /= np.abs(x).max()
    lam_prev = np.nan
    calm = 0
    for _ in range(max_iter):
        y = G @ x
        lam = np.abs(y).max()
        if lam == 0.0:
            raise ConvergenceError("matrix annihilates the iterate (reducible?)")
        y /= lam
        if lam_prev == lam_prev and abs(lam - lam_prev) <= tol * lam:
            calm += 1
        else:
            calm = 0
        x, lam_prev = y, lam
        if calm >= 3:
            if x[-1] <= 0:
                raise ConvergenceError("Perron vector has a non-positive last entry")
            xn = x / x[-1]
            if np.abs(G @ xn - lam * xn).max() <= 1e-10 * lam:
                return float(lam), xn
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
