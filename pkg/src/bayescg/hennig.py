"""Matrix-based probabilistic linear solver used as a baseline.

The unknown is the inverse ``H = A^{-1}`` with a Gaussian prior of mean
``H0`` and symmetric-Kronecker covariance ``W (x) W``.  Observations are
pairs ``(S, Y)`` with ``A S = Y``.  Only the projection of the posterior
onto the solution ``x = H b`` is ever formed, so no ``d^2 x d^2``
covariance is materialised.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, SingularGramError
from .linalg import densify, gram_cholesky


@dataclass(frozen=True)
class MatrixPosterior:
    """Posterior mean ``H`` and Kronecker factor ``W`` of the inverse."""

    H: np.ndarray
    W: np.ndarray

    @property
    def d(self):
        return self.H.shape[0]


def matrix_posterior(H0, W, S, Y) -> MatrixPosterior:
    """Condition the matrix prior on ``H Y = S``.

    Parameters
    ----------
    H0, W : ndarray, shape (d, d)
        Prior mean and symmetric positive-definite Kronecker factor.
    S, Y : ndarray, shape (d, m)
        Search directions and their images ``Y = A S``.

    Raises
    ------
    SingularGramError
        If ``Y^T W Y`` is not numerically positive definite.
    """
    H0, W = densify(H0), densify(W)
    S = np.atleast_2d(np.asarray(S, dtype=float).T).T
    Y = np.atleast_2d(np.asarray(Y, dtype=float).T).T
    d = H0.shape[0]
    if H0.shape != (d, d) or W.shape != (d, d) or S.shape[0] != d or S.shape != Y.shape:
        raise DimensionError("inconsistent shapes for the matrix posterior")
    if S.shape[1] == 0:
        return MatrixPosterior(H0.copy(), W.copy())
    WY = W @ Y
    G = Y.T @ WY
    G = 0.5 * (G + G.T)
    try:
        cf = (gram_cholesky(G), True)
    except np.linalg.LinAlgError as err:
        raise SingularGramError("Y^T W Y is singular") from err
    delta = S - H0 @ Y
    GiWYt = scipy.linalg.cho_solve(cf, WY.T)  # (Y^T W Y)^{-1} Y^T W
    Gidt = scipy.linalg.cho_solve(cf, delta.T)
    H = H0 + delta @ GiWYt + WY @ Gidt - WY @ scipy.linalg.cho_solve(cf, (Y.T @ delta) @ GiWYt)
    Wm = W - WY @ GiWYt
    return MatrixPosterior(H, 0.5 * (Wm + Wm.T))


def project_to_solution(mp: MatrixPosterior, b, half=True):
    """Solution-space marginal of ``x = H b``.

    Returns ``(H b, C)`` with
    ``C = c (b^T W b W + W b b^T W)`` and ``c = 1/2`` (``half=True``) or
    ``c = 1``.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != mp.d:
        raise DimensionError("b does not match the matrix posterior")
    Wb = mp.W @ b
    C = (b @ Wb) * mp.W + np.outer(Wb, Wb)
    if half:
        C = 0.5 * C
    return mp.H @ b, 0.5 * (C + C.T)
