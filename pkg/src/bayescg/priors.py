"""Prior means and covariance operators for the solution of ``A x = b``.

Covariances are represented by :class:`CovarianceOperator`, which only
needs to know how to apply the matrix to vectors.  The available prior
families are

``identity``
    ``Sigma0 = I``.
``dense``
    An explicit SPD matrix, ``params={"matrix": [[...], ...]}``.
``natural_inverse``
    ``Sigma0 = A^{-1}`` (test only, dense factorization of ``A``).
``natural_ata``
    ``Sigma0 = (A^T A)^{-1}`` (test only, dense factorization of ``A``).
``preconditioner``
    ``Sigma0 = (P^T P)^{-1}`` with ``P = L L^T`` from IC(0) of ``A``.
``krylov``
    Mass on a Krylov subspace ``K_n(M, b)`` plus a small isotropic weight
    on its orthogonal complement.
``matrix_equivalent``
    ``Sigma0 = (b^T b) I + b b^T``, the solution-space image of an
    identity matrix-variate prior on ``A^{-1}``.
"""

from dataclasses import dataclass, field
import json
import math
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .exceptions import BreakdownError, DimensionError
from .linalg import (
    DENSE_LIMIT,
    TriangularFactor,
    as_vector,
    densify,
    incomplete_cholesky_zero_fill,
    qr_null_space,
    symmetric_eig,
)

FAMILIES = (
    "identity",
    "dense",
    "natural_inverse",
    "natural_ata",
    "preconditioner",
    "krylov",
    "matrix_equivalent",
)

#: Complement weight used for the Krylov prior in the simulation study.
KRYLOV_PHI = 0.01


class CovarianceOperator:
    """Symmetric positive-definite operator ``v -> Sigma0 v``.

    Parameters
    ----------
    dim : int
        Dimension ``d``.
    apply : callable
        Maps a vector, or a matrix column by column, to its image.
    apply_inverse : callable, optional
        Maps ``v`` to ``Sigma0^{-1} v``.
    dense : ndarray, optional
        Explicit matrix.  Built lazily from `apply` when ``d <= 512``.
    name : str
        Short label used in reports.
    """

    def __init__(self, dim, apply, apply_inverse=None, dense=None, name="covariance"):
        self.dim = int(dim)
        self._apply = apply
        self._apply_inverse = apply_inverse
        self._dense = None if dense is None else np.asarray(dense, dtype=float)
        self.name = name

    def __repr__(self):
        return f"CovarianceOperator(name={self.name!r}, dim={self.dim})"

    @property
    def shape(self):
        return (self.dim, self.dim)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dim:
            raise DimensionError(f"operand has leading dimension {v.shape[0]}, expected {self.dim}")
        return v

    def apply(self, v):
        return np.asarray(self._apply(self._check(v)), dtype=float)

    __call__ = apply

    def __matmul__(self, v):
        return self.apply(v)

    @property
    def has_inverse(self):
        return self._apply_inverse is not None

    def apply_inverse(self, v):
        if self._apply_inverse is None:
            raise NotImplementedError(f"{self.name} prior has no inverse application")
        return np.asarray(self._apply_inverse(self._check(v)), dtype=float)

    def to_dense(self):
        """Explicit ``d x d`` matrix (symmetrised, cached)."""
        if self._dense is None:
            if self.dim > DENSE_LIMIT:
                raise ValueError(
                    f"dense materialisation is limited to d <= {DENSE_LIMIT}, got {self.dim}"
                )
            S = self.apply(np.eye(self.dim))
            self._dense = 0.5 * (S + S.T)
        return self._dense

    def inverse_dense(self):
        if self._apply_inverse is not None and self.dim <= DENSE_LIMIT:
            S = self.apply_inverse(np.eye(self.dim))
            return 0.5 * (S + S.T)
        return np.linalg.inv(self.to_dense())

    def trace(self):
        return float(np.trace(self.to_dense()))


def _scale_rows(w, X):
    return w[:, None] * X if X.ndim == 2 else w * X


def identity_covariance(d):
    return CovarianceOperator(d, lambda v: v.copy(), lambda v: v.copy(), name="identity")


def dense_covariance(S, name="dense", check=True):
    """Covariance given by an explicit SPD matrix."""
    S = densify(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError("covariance matrix must be square")
    if check:
        if not np.allclose(S, S.T, rtol=1e-12, atol=1e-12 * np.abs(S).max()):
            raise ValueError("covariance matrix is not symmetric")
    factor = scipy.linalg.cho_factor(S)
    return CovarianceOperator(
        S.shape[0],
        lambda v: S @ v,
        lambda v: scipy.linalg.cho_solve(factor, v),
        dense=S,
        name=name,
    )


def natural_inverse_covariance(A):
    """``Sigma0 = A^{-1}``, applied by a dense LU solve.  Test only."""
    A = densify(A)
    lu = scipy.linalg.lu_factor(A)
    return CovarianceOperator(
        A.shape[0],
        lambda v: scipy.linalg.lu_solve(lu, v),
        lambda v: A @ v,
        name="natural_inverse",
    )


def natural_ata_covariance(A):
    """``Sigma0 = (A^T A)^{-1} = A^{-1} A^{-T}`` via two dense solves.  Test only."""
    A = densify(A)
    lu = scipy.linalg.lu_factor(A)
    return CovarianceOperator(
        A.shape[0],
        lambda v: scipy.linalg.lu_solve(lu, scipy.linalg.lu_solve(lu, v, trans=1)),
        lambda v: A.T @ (A @ v),
        name="natural_ata",
    )


def preconditioner_covariance(factor: TriangularFactor):
    """``Sigma0 = (P^T P)^{-1}`` for ``P = L L^T``.

    Applying ``Sigma0`` costs four triangular solves:
    ``L^{-T} L^{-1} L^{-T} L^{-1} v``.
    """

    def apply(v):
        return factor.solve_transpose(factor.solve(factor.solve_transpose(factor.solve(v))))

    def apply_inverse(v):
        L = factor.L
        Pv = L @ (L.T @ v)
        return L @ (L.T @ Pv)

    return CovarianceOperator(factor.shape[0], apply, apply_inverse, name="preconditioner")


def matrix_equivalent_covariance(b):
    """``Sigma0 = (b^T b) I + b b^T``."""
    b = as_vector(b, name="b")
    c = float(b @ b)
    if c == 0:
        raise ValueError("matrix-equivalent prior needs b != 0")

    def apply(v):
        return c * v + np.outer(b, b @ v).reshape(v.shape)

    def apply_inverse(v):
        # Sherman-Morrison
        return (v - np.outer(b, b @ v).reshape(v.shape) / (2.0 * c)) / c

    return CovarianceOperator(b.shape[0], apply, apply_inverse, name="matrix_equivalent")


class KrylovBasis(NamedTuple):
    """Orthonormal Krylov basis and the index where it broke down, if any."""

    vectors: np.ndarray
    breakdown_at: Optional[int]


def krylov_basis(M_apply, b, n, breakdown_tol=1e-12):
    """Orthonormal basis of ``K_n(M, b) = span(b, M b, ..., M^n b)``.

    Column ``j`` spans, together with the columns before it, the same
    subspace as ``b, ..., M^j b``.  New directions are generated from the
    last orthonormal column (Arnoldi) and orthogonalised by modified
    Gram-Schmidt, applied twice.

    Parameters
    ----------
    M_apply : callable or matrix
    b : array_like
    n : int
        Highest power; at most ``n + 1`` columns are returned.
    breakdown_tol : float
        A new direction whose norm drops below this fraction of its
        pre-orthogonalisation norm is treated as lying in the span of the
        previous ones.

    Returns
    -------
    KrylovBasis
        ``vectors`` has ``min(n + 1, rank)`` columns; ``breakdown_at`` is
        the index of the first dependent power, or ``None``.
    """
    b = as_vector(b, name="b")
    d = b.shape[0]
    if n + 1 > d:
        raise ValueError(f"n + 1 = {n + 1} exceeds the dimension {d}")
    nb = np.linalg.norm(b)
    if nb == 0:
        raise ValueError("Krylov basis needs b != 0")
    apply = M_apply if callable(M_apply) else (lambda v: M_apply @ v)
    K = np.zeros((d, n + 1))
    K[:, 0] = b / nb
    for j in range(1, n + 1):
        w = np.asarray(apply(K[:, j - 1]), dtype=float).reshape(-1)
        w_norm = np.linalg.norm(w)
        for _ in range(2):
            for i in range(j):
                w -= (K[:, i] @ w) * K[:, i]
        nw = np.linalg.norm(w)
        if w_norm == 0 or nw < breakdown_tol * w_norm:
            return KrylovBasis(K[:, :j].copy(), j)
        K[:, j] = w / nw
    return KrylovBasis(K, None)


def phi_diagonal(n, sigma, xi):
    """Krylov-prior weights ``(2 sigma xi^i)^2`` for ``i = 0..n``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    i = np.arange(n + 1)
    return (2.0 * sigma * xi**i) ** 2


def phi_upper_bound(n, sigma, xi):
    """Recommended ceiling ``(2 sigma xi^(n+2))^2`` for the complement weight.

    Keeping ``phi`` below it makes the complement variance smaller than the
    weight of any Krylov direction beyond the basis.
    """
    if not sigma > 0 or not 0 < xi < 1:
        raise ValueError("need sigma > 0 and xi in (0, 1)")
    return (2.0 * sigma * xi ** (n + 2)) ** 2


def krylov_prior_covariance(K, phi_diag, Q2, phi):
    """Covariance ``K diag(phi_diag) K^T + phi Q2 Q2^T``.

    `K` and `Q2` must jointly form an orthonormal set of columns.
    """
    K = np.asarray(K, dtype=float)
    Q2 = np.asarray(Q2, dtype=float).reshape(K.shape[0], -1)
    w = np.asarray(phi_diag, dtype=float)
    if np.any(w <= 0) or not phi > 0:
        raise ValueError("Krylov prior weights must be positive")
    if w.shape[0] != K.shape[1]:
        raise DimensionError("one weight per Krylov basis vector is required")

    def apply(v):
        return K @ _scale_rows(w, K.T @ v) + phi * (Q2 @ (Q2.T @ v))

    def apply_inverse(v):
        return K @ _scale_rows(1.0 / w, K.T @ v) + (Q2 @ (Q2.T @ v)) / phi

    return CovarianceOperator(K.shape[0], apply, apply_inverse, name="krylov")


def estimate_xi(A):
    """``(kappa - 1) / (kappa + 1)`` from the extreme eigenvalues of ``A``."""
    w, _ = symmetric_eig(A)
    if w[-1] <= 0:
        raise ValueError("xi estimate needs a positive definite matrix")
    kappa = w[0] / w[-1]
    return float((kappa - 1.0) / (kappa + 1.0))


def estimate_sigma(A, b):
    """Crude stand-in for ``||x*||_A``: ``||b||_2 / ||A||_F``."""
    return float(np.linalg.norm(b) / np.linalg.norm(densify(A)))


@dataclass(frozen=True)
class PriorSpec:
    """Serializable description of a prior.

    Attributes
    ----------
    family : str
        One of :data:`FAMILIES`.
    params : dict
        Family-specific parameters.
    x0 : str or list
        ``"zeros"``, ``"rhs"`` (use ``b``) or an explicit vector.
    """

    family: str
    params: dict = field(default_factory=dict)
    x0: object = "zeros"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.family == "krylov":
            p = self.params
            if "n" not in p:
                raise ValueError("krylov prior needs params['n']")
            xi = p.get("xi")
            if xi is not None and not 0 < xi < 1:
                raise ValueError("xi must lie in (0, 1)")
            if not p.get("phi", KRYLOV_PHI) > 0:
                raise ValueError("phi must be positive")

    def to_dict(self):
        x0 = self.x0 if isinstance(self.x0, str) else [float(v) for v in self.x0]
        return {"family": self.family, "params": dict(self.params), "x0": x0}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["family"], dict(obj.get("params", {})), obj.get("x0", "zeros"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Prior:
    """Gaussian prior ``N(mean, cov)`` on the solution."""

    mean: np.ndarray
    cov: CovarianceOperator
    spec: Optional[PriorSpec] = None

    @property
    def dim(self):
        return self.cov.dim


def _krylov_covariance(params, A, b, factor=None):
    if b is None:
        raise ValueError("the Krylov prior needs the right-hand side b")
    b = as_vector(b, A.shape[0], name="b")
    n = int(params["n"])
    choice = params.get("M", "A")
    if choice == "A":
        M_apply = lambda v: A @ v  # noqa: E731
    elif choice == "PinvA":
        if not params.get("experimental", False):
            raise ValueError("M = P^{-1} A is experimental; set params['experimental'] = true")
        if factor is None:
            factor = incomplete_cholesky_zero_fill(A)
        M_apply = lambda v: factor.solve_transpose(factor.solve(A @ v))  # noqa: E731
    else:
        raise ValueError(f"unknown Krylov operator {choice!r}")
    basis = krylov_basis(M_apply, b, n)
    if basis.breakdown_at is not None:
        raise BreakdownError(
            f"Krylov basis broke down at power {basis.breakdown_at}", index=basis.breakdown_at
        )
    K = basis.vectors
    xi = params.get("xi")
    sigma = params.get("sigma")
    xi = estimate_xi(A) if xi is None else float(xi)
    sigma = estimate_sigma(A, b) if sigma is None else float(sigma)
    Q2 = qr_null_space(K)
    return krylov_prior_covariance(K, phi_diagonal(n, sigma, xi), Q2, float(params.get("phi", KRYLOV_PHI)))


def build_covariance(spec: PriorSpec, A, b=None, factor=None):
    """Build the covariance operator described by `spec` for matrix `A`.

    Parameters
    ----------
    spec : PriorSpec
    A : array_like or sparse matrix
    b : array_like, optional
        Needed by the ``krylov`` and ``matrix_equivalent`` families.
    factor : TriangularFactor, optional
        Precomputed IC(0) factor for the ``preconditioner`` family.
    """
    d = A.shape[0]
    family = spec.family
    if family == "identity":
        return identity_covariance(d)
    if family == "dense":
        S = np.asarray(spec.params["matrix"], dtype=float)
        if S.shape != (d, d):
            raise DimensionError(f"dense prior has shape {S.shape}, expected {(d, d)}")
        return dense_covariance(S)
    if family in ("natural_inverse", "natural_ata"):
        if d > DENSE_LIMIT:
            raise ValueError(f"{family} prior is test-only and limited to d <= {DENSE_LIMIT}")
        return natural_inverse_covariance(A) if family == "natural_inverse" else natural_ata_covariance(A)
    if family == "preconditioner":
        if factor is None:
            factor = incomplete_cholesky_zero_fill(A)
        return preconditioner_covariance(factor)
    if family == "krylov":
        return _krylov_covariance(spec.params, A, b, factor)
    if family == "matrix_equivalent":
        if b is None:
            raise ValueError("the matrix-equivalent prior needs the right-hand side b")
        return matrix_equivalent_covariance(b)
    raise ValueError(f"unsupported prior family {family!r}")


def prior_mean(spec: PriorSpec, d, b=None):
    if isinstance(spec.x0, str):
        if spec.x0 == "zeros":
            return np.zeros(d)
        if spec.x0 == "rhs":
            if b is None:
                raise ValueError("x0 = 'rhs' needs b")
            return as_vector(b, d, name="b").copy()
        raise ValueError(f"unknown x0 keyword {spec.x0!r}")
    return as_vector(spec.x0, d, name="x0")


def build_prior(spec: PriorSpec, A, b=None, factor=None) -> Prior:
    """Mean and covariance operator for `spec`."""
    return Prior(prior_mean(spec, A.shape[0], b), build_covariance(spec, A, b, factor), spec)


def check_covariance(cov: CovarianceOperator, n_probes=20, rtol=1e-10, seed=0):
    """Randomized symmetry and positive-definiteness probes.

    Returns the largest relative asymmetry observed; raises ``ValueError``
    on a failed probe.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(cov.dim)
        v = rng.standard_normal(cov.dim)
        Su, Sv = cov @ u, cov @ v
        uSv, vSu = u @ Sv, v @ Su
        scale = math.sqrt(abs(u @ Su) * abs(v @ Sv)) or 1.0
        asym = abs(uSv - vSu) / scale
        worst = max(worst, asym)
        if asym > rtol:
            raise ValueError(f"{cov.name} covariance is not symmetric (relative {asym:.2e})")
        if not v @ Sv > 0:
            raise ValueError(f"{cov.name} covariance is not positive definite")
    return worst
