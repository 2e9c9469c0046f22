"""Dense and sparse kernels used throughout the package.

Sparse matrices are ``scipy.sparse`` CSR matrices with sorted column
indices; dense matrices are 2-d ``numpy`` arrays.  Factorizations fall back
to dense arithmetic whenever the dimension is at most ``DENSE_LIMIT``.
"""

from dataclasses import dataclass
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .exceptions import (
    BreakdownError,
    DimensionError,
    IncompleteCholeskyBreakdown,
    RankDeficiencyError,
)

DENSE_LIMIT = 512

#: Relative diagonal shift used to restart a failed incomplete Cholesky.
IC_SHIFT = 1e-2


def as_vector(v, d=None, name="vector"):
    """Return `v` as a 1-d float array, optionally checking its length."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 2 and 1 in v.shape:
        v = v.reshape(-1)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {d}")
    return v


def to_csr(A):
    """Convert a dense or sparse matrix to CSR with sorted indices."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def densify(A):
    """Return a dense copy of `A`."""
    if sp.issparse(A):
        return A.toarray()
    return np.array(A, dtype=float)


def matvec(A, v):
    """Compute ``A @ v`` for a dense or CSR matrix without touching `v`.

    Raises
    ------
    DimensionError
        If the number of columns of `A` differs from ``len(v)``.
    """
    v = np.asarray(v, dtype=float)
    if A.ndim != 2 or A.shape[1] != v.shape[0]:
        raise DimensionError(
            f"cannot multiply matrix of shape {A.shape} with vector of length {v.shape[0]}"
        )
    out = A @ v
    return np.asarray(out, dtype=float).reshape(-1) if v.ndim == 1 else np.asarray(out)


def _apply(M, v):
    if callable(M) and not hasattr(M, "shape"):
        return np.asarray(M(v), dtype=float)
    return np.asarray(M @ v, dtype=float)


def weighted_inner(M, x, y):
    """Weighted inner product ``x.T @ M @ y``.

    Parameters
    ----------
    M : array_like, sparse matrix, operator or callable
        Symmetric weight.  Anything supporting ``M @ y`` or ``M(y)``.
    x, y : array_like
        Vectors of equal length.
    """
    x = as_vector(x, name="x")
    y = as_vector(y, x.shape[0], name="y")
    My = _apply(M, y).reshape(-1)
    if My.shape[0] != x.shape[0]:
        raise DimensionError("weight operator does not conform with the vectors")
    return float(x @ My)


@dataclass(frozen=True)
class TriangularFactor:
    """Lower triangular factor ``L`` stored in CSR form.

    Attributes
    ----------
    L : scipy.sparse.csr_matrix
        Lower triangular matrix.
    unit_diagonal : bool
        Whether the diagonal of `L` is implicitly one.
    shift : float
        Relative diagonal shift that was added to ``A`` before factorizing
        (zero if the first attempt succeeded).
    """

    L: sp.csr_matrix
    unit_diagonal: bool = False
    shift: float = 0.0

    def __post_init__(self):
        L = self.L
        if L.shape[0] != L.shape[1]:
            raise DimensionError("triangular factor must be square")
        if sp.triu(L, k=1).nnz:
            raise ValueError("factor is not lower triangular")
        if not self.unit_diagonal and np.any(L.diagonal() <= 0):
            raise ValueError("factor must have a strictly positive diagonal")

    @property
    def shape(self):
        return self.L.shape

    @property
    def dense(self):
        # cached dense copy keeps triangular solves in LAPACK for small d
        cached = self.__dict__.get("_dense")
        if cached is None:
            cached = self.L.toarray()
            object.__setattr__(self, "_dense", cached)
        return cached

    def solve(self, v):
        """Return ``L^{-1} v``."""
        return self._solve(v, trans=False)

    def solve_transpose(self, v):
        """Return ``L^{-T} v``."""
        return self._solve(v, trans=True)

    def _solve(self, v, trans):
        v = np.asarray(v, dtype=float)
        if self.shape[0] <= DENSE_LIMIT:
            return scipy.linalg.solve_triangular(
                self.dense, v, lower=True, trans=1 if trans else 0,
                unit_diagonal=self.unit_diagonal, check_finite=False,
            )
        if trans:
            return sp.linalg.spsolve_triangular(
                self.L.T.tocsr(), v, lower=False, unit_diagonal=self.unit_diagonal
            )
        return sp.linalg.spsolve_triangular(
            self.L, v, lower=True, unit_diagonal=self.unit_diagonal
        )

    def preconditioner(self):
        """Return the preconditioner ``P = L L^T`` as a CSR matrix."""
        return to_csr(self.L @ self.L.T)


def _ic0_dense(A):
    d = A.shape[0]
    a = np.tril(densify(A))
    mask = a != 0
    np.fill_diagonal(mask, True)
    # symmetric pattern on the full square lets the rank-1 update stay vectorized
    full_mask = mask | mask.T
    a = np.where(full_mask, a + np.tril(a, -1).T, 0.0)
    for k in range(d):
        pivot = a[k, k]
        if not pivot > 0:
            raise IncompleteCholeskyBreakdown(
                f"non-positive pivot {pivot:.3e} at row {k}", index=k
            )
        a[k, k] = math.sqrt(pivot)
        col = a[k + 1:, k] / a[k, k]
        a[k + 1:, k] = col
        a[k, k + 1:] = col
        a[k + 1:, k + 1:] -= np.outer(col, col) * full_mask[k + 1:, k + 1:]
    return to_csr(np.tril(a))


def _ic0_sparse(A):
    A = to_csr(sp.tril(A))
    d = A.shape[0]
    rows = []
    for i in range(d):
        start, stop = A.indptr[i], A.indptr[i + 1]
        row = {}
        diag = 0.0
        for j, a_ij in zip(A.indices[start:stop], A.data[start:stop]):
            if j == i:
                diag = a_ij
                continue
            prev = rows[j]
            s = a_ij
            for k, l_ik in row.items():
                l_jk = prev.get(k)
                if l_jk is not None:
                    s -= l_ik * l_jk
            row[j] = s / prev[j]
        pivot = diag - sum(v * v for v in row.values())
        if not pivot > 0:
            raise IncompleteCholeskyBreakdown(
                f"non-positive pivot {pivot:.3e} at row {i}", index=i
            )
        row[i] = math.sqrt(pivot)
        rows.append(row)
    indptr = np.zeros(d + 1, dtype=np.int64)
    indices, data = [], []
    for i, row in enumerate(rows):
        cols = sorted(row)
        indices.extend(cols)
        data.extend(row[c] for c in cols)
        indptr[i + 1] = len(indices)
    return sp.csr_matrix((np.array(data), np.array(indices), indptr), shape=(d, d))


def incomplete_cholesky_zero_fill(A, shifts=(IC_SHIFT,)):
    """Incomplete Cholesky factorization with zero fill-in, IC(0).

    The factor ``L`` keeps exactly the sparsity pattern of the lower
    triangle of `A`; ``L @ L.T`` reproduces `A` on that pattern.

    Parameters
    ----------
    A : array_like or sparse matrix
        Symmetric matrix with positive diagonal.
    shifts : sequence of float
        Relative diagonal shifts tried in order after a breakdown: the
        factorization restarts on ``A + shift * diag(A)``.  Pass ``()`` to
        disable restarts.

    Returns
    -------
    TriangularFactor

    Raises
    ------
    IncompleteCholeskyBreakdown
        If every attempt met a non-positive pivot.  ``err.index`` holds the
        offending row of the last attempt.
    """
    A = to_csr(A)
    if A.shape[0] != A.shape[1]:
        raise DimensionError("incomplete Cholesky needs a square matrix")
    if np.any(A.diagonal() <= 0):
        raise ValueError("incomplete Cholesky needs a positive diagonal")
    factorize = _ic0_dense if A.shape[0] <= DENSE_LIMIT else _ic0_sparse
    shift = 0.0
    attempts = (0.0,) + tuple(shifts)
    for shift in attempts:
        target = A if shift == 0.0 else to_csr(A + shift * sp.diags(A.diagonal()))
        try:
            return TriangularFactor(factorize(target), shift=shift)
        except IncompleteCholeskyBreakdown as err:
            last = err
    raise last


def qr_null_space(K, rank_tol=1e-10):
    """Orthonormal basis of the null space of ``K.T``.

    Computed from a complete QR decomposition ``K = Q R``: the trailing
    ``d - k`` columns of ``Q`` span the orthogonal complement of
    ``range(K)``.

    Raises
    ------
    RankDeficiencyError
        If a diagonal entry of ``R`` falls below ``rank_tol`` times the
        largest one.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    d, k = K.shape
    if k > d:
        raise DimensionError(f"cannot complement {k} columns in dimension {d}")
    Q, R = np.linalg.qr(K, mode="complete")
    diag = np.abs(np.diag(R))
    if k and (diag.max() == 0 or diag.min() < rank_tol * diag.max()):
        raise RankDeficiencyError("K does not have full column rank")
    return Q[:, k:]


def jacobi_eig(M, tol=1e-15, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.

    Raises
    ------
    BreakdownError
        If the off-diagonal mass has not vanished after `max_sweeps` sweeps.
    """
    a = np.array(M, dtype=float)
    n = a.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise BreakdownError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def symmetric_eig(M, method="lapack"):
    """Eigenvalues (descending) and orthonormal eigenvectors of symmetric `M`.

    ``method="lapack"`` calls ``numpy.linalg.eigh``; ``method="jacobi"``
    uses :func:`jacobi_eig`, which is slower but self-contained.
    """
    M = densify(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError("symmetric_eig needs a square matrix")
    if method == "jacobi":
        return jacobi_eig(M)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return w[::-1], V[:, ::-1]


def psd_eig(S, sym_tol=1e-10):
    """Raw eigenpairs (descending) of a nominally symmetric PSD matrix.

    Unlike :func:`svd_psd` nothing is clamped, so callers can inspect
    negative eigenvalues caused by rounding or lost conjugacy.
    """
    S = densify(S)
    scale = max(1.0, float(np.abs(S).max(initial=0.0)))
    if np.abs(S - S.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return symmetric_eig(S)


def svd_psd(S, sym_tol=1e-10):
    """Singular value decomposition ``S = U diag(sigma) U.T`` of a PSD matrix.

    For symmetric positive semidefinite matrices the SVD coincides with
    the eigendecomposition; tiny negative eigenvalues are clamped to zero.

    Returns
    -------
    U : ndarray, shape (d, d)
    sigma : ndarray, shape (d,)
        Descending, non-negative.
    """
    w, U = psd_eig(S, sym_tol)
    return U, np.clip(w, 0.0, None)


def matrix_root(M, kind="symmetric"):
    """A square root ``R`` of SPD `M` with ``R.T @ R == M``.

    ``kind="symmetric"`` gives the symmetric root from the eigendecomposition;
    ``kind="cholesky"`` gives ``R = L.T`` with ``M = L L^T``.
    """
    M = densify(M)
    if kind == "symmetric":
        w, V = symmetric_eig(M)
        if w[-1] <= 0:
            raise np.linalg.LinAlgError("matrix is not positive definite")
        return (V * np.sqrt(w)) @ V.T
    if kind == "cholesky":
        return np.linalg.cholesky(M).T
    raise ValueError(f"unknown square-root convention {kind!r}")


def condition_number(A):
    """Two-norm condition number of a dense or sparse matrix."""
    s = np.linalg.svd(densify(A), compute_uv=False)
    return float(s[0] / s[-1])


def gram_cholesky(G, rtol=1e-12):
    """Lower Cholesky factor of a Gram matrix, rejecting numerically singular ones.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the factorisation fails or a squared pivot falls below `rtol`
        times the largest diagonal entry.
    """
    G = 0.5 * (G + G.T)
    L = np.linalg.cholesky(G)
    if G.size and np.min(np.diag(L)) ** 2 <= rtol * np.max(np.diag(G)):
        raise np.linalg.LinAlgError("Gram matrix is numerically singular")
    return L
