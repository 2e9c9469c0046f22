"""Posterior computations for the Bayesian conjugate gradient method.

All solvers condition a Gaussian prior ``N(x0, Sigma0)`` on the linear
information ``S^T A x = S^T b`` and return a :class:`GaussianPosterior`
whose covariance is stored as a low-rank downdate of the prior,
``Sigma_m = Sigma0 - F F^T``.
"""

from dataclasses import dataclass, field, replace
import logging
import math
from typing import Optional
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import BreakdownError, DimensionError, SingularGramError
from .linalg import as_vector, densify, gram_cholesky, matrix_root, symmetric_eig
from .priors import Prior

logger = logging.getLogger(__name__)

MODES = ("sequential", "batch", "optimal", "provided")

#: Largest dimension for which general-loss optimal directions may use A^{-T}.
OPTIMAL_DENSE_INVERSE_LIMIT = 64


@dataclass(frozen=True)
class SolveConfig:
    """Options shared by the solvers.

    Attributes
    ----------
    max_iter : int
        Iteration cap ``m_max``.
    tol : float
        Stop once ``||r_m||_2 < tol``.  ``0`` runs to the cap.
    mode : str
        ``"sequential"`` (three-term recursion), ``"batch"`` (full
        Gram-Schmidt against all previous directions), ``"optimal"``
        (a priori optimal directions for the residual loss) or
        ``"provided"`` (directions given in `directions`).
    directions : ndarray, optional
        ``d x m`` matrix for ``mode="provided"``.
    hierarchical : bool
        Flag carried to reports; the t posterior is obtained with
        :func:`hierarchical_posterior`.
    record_iterates : bool
        Keep every mean ``x_0, ..., x_m``.
    drift_every : int
        Compare the recursive residual with ``b - A x_m`` this often.
    gs_passes : int
        Gram-Schmidt passes per batch direction.
    """

    max_iter: int = 100
    tol: float = 1e-10
    mode: str = "sequential"
    directions: Optional[np.ndarray] = None
    hierarchical: bool = False
    record_iterates: bool = False
    drift_every: int = 10
    gs_passes: int = 2

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"unknown direction mode {self.mode!r}")
        if self.mode == "provided" and self.directions is None:
            raise ValueError("mode 'provided' needs directions")


def _freeze(a):
    if a is not None:
        a = np.asarray(a)
        a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianPosterior:
    """Posterior ``N(mean, Sigma0 - factor @ factor.T)``.

    Attributes
    ----------
    mean : ndarray, shape (d,)
    factor : ndarray, shape (d, m)
        Columns ``Sigma0 A^T s_j`` for ``A Sigma0 A^T``-orthonormal ``s_j``.
    prior : Prior
    m : int
        Number of search directions used.
    residual_history : ndarray, shape (m + 1,)
        ``||r_j||_2`` for ``j = 0..m``.
    nu : float
        Scale estimate ``nu_m`` (``0`` when ``m = 0``).
    directions : ndarray, shape (d, m)
        Normalised search directions ``S_m``.
    images : ndarray, shape (d, m)
        ``A Sigma0 A^T s_j``.
    converged : bool
        Whether the residual tolerance was met.
    iterates : ndarray, shape (m + 1, d), optional
    info : dict
        Diagnostics (mode, residual drift checks, ...).
    """

    mean: np.ndarray
    factor: np.ndarray
    prior: Prior
    m: int
    residual_history: np.ndarray
    nu: float
    directions: np.ndarray
    images: Optional[np.ndarray] = None
    converged: bool = False
    iterates: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mean", "factor", "residual_history", "directions", "images", "iterates"):
            _freeze(getattr(self, name))
        if self.factor.shape[1] != self.m:
            raise ValueError("factor must have exactly m columns")

    @property
    def d(self):
        return self.mean.shape[0]

    @property
    def x0(self):
        return self.prior.mean

    def cov_dense(self):
        return materialize_posterior_cov(self)

    def trace_history(self):
        """``tr(Sigma_j)`` for ``j = 0..m``."""
        tr0 = self.prior.cov.trace()
        drops = np.einsum("ij,ij->j", self.factor, self.factor)
        return tr0 - np.concatenate([[0.0], np.cumsum(drops)])

    def truncated(self, k):
        """The posterior after the first `k` iterations (needs iterates for the mean)."""
        if not 0 <= k <= self.m:
            raise ValueError(f"k must lie in [0, {self.m}]")
        if self.iterates is None:
            raise ValueError("truncation needs recorded iterates")
        nu_k = float(self.info.get("nu_tilde_history", [0.0] * (self.m + 1))[k] / k) if k else 0.0
        return replace(
            self,
            mean=self.iterates[k].copy(),
            factor=self.factor[:, :k].copy(),
            m=k,
            residual_history=self.residual_history[: k + 1].copy(),
            nu=nu_k,
            directions=self.directions[:, :k].copy(),
            images=None if self.images is None else self.images[:, :k].copy(),
            iterates=self.iterates[: k + 1].copy(),
            info=dict(self.info),
        )


@dataclass(frozen=True)
class TPosterior:
    """Multivariate-t posterior ``MVT_m(location, nu * Sigma_m)``.

    The scale ``nu`` has the inverse-gamma posterior
    ``IG(m / 2, m nu / 2)``.
    """

    location: np.ndarray
    nu: float
    base: GaussianPosterior
    dof: int

    @property
    def ig_shape(self):
        return self.dof / 2.0

    @property
    def ig_scale(self):
        return self.dof * self.nu / 2.0

    def scale_dense(self):
        return self.nu * materialize_posterior_cov(self.base)


def _check_system(A, b, prior):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got shape {A.shape}")
    b = as_vector(b, A.shape[0], name="b")
    if prior.dim != A.shape[0]:
        raise DimensionError(f"prior has dimension {prior.dim}, system has {A.shape[0]}")
    return b


def _matvec(A, v):
    return np.asarray(A @ v, dtype=float).reshape(v.shape)


def posterior_general(A, b, prior: Prior, S) -> GaussianPosterior:
    """Condition the prior on ``S^T A x = S^T b`` for arbitrary directions.

    Uses ``Lambda = S^T A Sigma0 A^T S = L L^T`` and returns the factor
    ``Sigma0 A^T S L^{-T}``, so the result is exact for non-conjugate
    directions.  ``nu`` is the general hierarchical scale
    ``r0^T S Lambda^{-1} S^T r0 / m``.

    Raises
    ------
    SingularGramError
        If ``Lambda`` is not numerically positive definite.
    """
    b = _check_system(A, b, prior)
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] != A.shape[0]:
        raise DimensionError("directions must have d rows")
    m = S.shape[1]
    x0 = prior.mean
    r0 = b - _matvec(A, x0)
    if m == 0:
        return GaussianPosterior(
            x0.copy(), np.zeros((A.shape[0], 0)), prior, 0,
            np.array([np.linalg.norm(r0)]), 0.0, S.copy(), np.zeros((A.shape[0], 0)),
            converged=bool(np.linalg.norm(r0) == 0), info={"mode": "provided"},
        )
    AtS = np.asarray(A.T @ S, dtype=float)
    F_raw = prior.cov.apply(AtS)
    G_raw = np.asarray(A @ F_raw, dtype=float)
    Lam = S.T @ G_raw
    Lam = 0.5 * (Lam + Lam.T)
    try:
        L = gram_cholesky(Lam)
    except np.linalg.LinAlgError as err:
        raise SingularGramError("Gram matrix S^T A Sigma0 A^T S is singular") from err
    # whiten: factor = F_raw L^{-T}
    F = scipy.linalg.solve_triangular(L, F_raw.T, lower=True).T
    G = scipy.linalg.solve_triangular(L, G_raw.T, lower=True).T
    Sn = scipy.linalg.solve_triangular(L, S.T, lower=True).T
    c = scipy.linalg.solve_triangular(L, S.T @ r0, lower=True)
    mean = x0 + F @ c
    r_m = b - _matvec(A, mean)
    return GaussianPosterior(
        mean, F, prior, m,
        np.array([np.linalg.norm(r0), np.linalg.norm(r_m)]),
        float(c @ c / m), Sn, G,
        info={"mode": "provided", "nu_tilde_history": [0.0] * m + [float(c @ c)]},
    )


def optimal_directions(A, prior: Prior, m, M=None, root="symmetric", allow_dense_inverse=False):
    """A priori optimal search directions for the loss ``||x - x*||_M^2``.

    The directions are ``A^{-T} M^{T/2} Phi`` with ``Phi`` the `m` leading
    orthonormal eigenvectors of ``M^{1/2} Sigma0 M^{T/2}``.  For the
    residual loss ``M = A^T A`` (the default, ``M=None``) this is the set of
    leading eigenvectors of ``A Sigma0 A^T`` and no inverse is needed.  Any
    other `M` goes through a dense solve with ``A^T`` and is restricted to
    ``d <= 64`` unless `allow_dense_inverse` is set.

    Returns
    -------
    ndarray, shape (d, m)
        Mutually ``A Sigma0 A^T``-conjugate, not normalised.
    """
    d = A.shape[0]
    if not 1 <= m <= d:
        raise ValueError(f"m must lie in [1, {d}]")
    Ad = densify(A)
    Sigma0 = prior.cov.to_dense()
    if M is None:
        _, V = symmetric_eig(Ad @ Sigma0 @ Ad.T)
        return V[:, :m].copy()
    if d > OPTIMAL_DENSE_INVERSE_LIMIT and not allow_dense_inverse:
        raise ValueError(
            f"general-loss optimal directions need A^-T; limited to d <= {OPTIMAL_DENSE_INVERSE_LIMIT}"
        )
    R = matrix_root(M, kind=root)  # R^T R = M, so M^{1/2} = R
    _, V = symmetric_eig(R @ Sigma0 @ R.T)
    return np.linalg.solve(Ad.T, R.T @ V[:, :m])


def classical_cg(A, b, x0=None, config: Optional[SolveConfig] = None):
    """Conjugate gradients with ``A``-normalised search directions.

    Directions follow ``s~_m = r_{m-1} - <s_{m-1}, r_{m-1}>_A s_{m-1}``,
    ``s_m = s~_m / ||s~_m||_A`` and ``x_m = x_{m-1} + s_m (s_m^T r_{m-1})``.

    Returns
    -------
    iterates : ndarray, shape (m + 1, d)
    residuals : ndarray, shape (m + 1,)
        Residual norms.

    Raises
    ------
    BreakdownError
        If ``<s~, s~>_A <= 0`` (``A`` not positive definite).
    """
    config = config or SolveConfig()
    b = as_vector(b, A.shape[0], name="b")
    x = np.zeros_like(b) if x0 is None else as_vector(x0, b.shape[0], name="x0").copy()
    r = b - _matvec(A, x)
    iterates, residuals = [x.copy()], [np.linalg.norm(r)]
    s = As = None
    for m in range(1, config.max_iter + 1):
        if residuals[-1] < config.tol or residuals[-1] == 0:
            break
        s_t = r if s is None else r - (As @ r) * s
        As_t = _matvec(A, s_t)
        e2 = s_t @ As_t
        if not e2 > 0:
            raise BreakdownError(f"<s, A s> = {e2:.3e} at iteration {m}: A is not SPD", index=m)
        e = math.sqrt(e2)
        s, As = s_t / e, As_t / e
        c = s @ r
        x = x + c * s
        r = r - c * As
        iterates.append(x.copy())
        residuals.append(np.linalg.norm(r))
    return np.array(iterates), np.array(residuals)


def bayescg(A, b, prior: Prior, config: Optional[SolveConfig] = None) -> GaussianPosterior:
    """Bayesian conjugate gradients.

    With ``mode="sequential"`` this is the three-term recursion: each
    iteration costs one product with ``A^T``, one with ``Sigma0`` and one
    with ``A``.  ``"batch"`` additionally orthogonalises every new
    direction against all previous ones in the ``A Sigma0 A^T`` inner
    product.  ``"optimal"`` iterates over precomputed a priori optimal
    directions, and ``"provided"`` delegates to :func:`posterior_general`.

    The residual is updated recursively as
    ``r_m = r_{m-1} - alpha_m A Sigma0 A^T s~_m``; every
    ``config.drift_every`` iterations its distance to ``b - A x_m`` is
    recorded in ``info["drift"]``.

    Raises
    ------
    BreakdownError
        If ``s~^T A Sigma0 A^T s~ <= 0`` for a non-zero direction, or the
        iterates become non-finite.  The posterior accumulated so far is
        attached as ``partial``.
    """
    config = config or SolveConfig()
    b = _check_system(A, b, prior)
    if config.mode == "provided":
        post = posterior_general(A, b, prior, config.directions)
        r_end = post.residual_history[-1]
        return replace(post, converged=bool(r_end < config.tol or r_end == 0))

    d = A.shape[0]
    x = prior.mean.astype(float).copy()
    r = b - _matvec(A, x)
    r_norm0 = np.linalg.norm(r)
    res_hist = [r_norm0]
    iterates = [x.copy()] if config.record_iterates else None
    F_cols, S_cols, G_cols = [], [], []
    nu_tilde = 0.0
    nu_hist = [0.0]
    drift = []
    converged = r_norm0 < config.tol or r_norm0 == 0
    fixed = None
    if config.mode == "optimal" and not converged:
        fixed = optimal_directions(A, prior, min(config.max_iter, d))

    s_t = r.copy()
    rr = r @ r
    m = 0
    while not converged and m < config.max_iter:
        if config.mode == "batch":
            s_t = r.copy()
            for _ in range(config.gs_passes):
                for s_i, g_i in zip(S_cols, G_cols):
                    s_t -= (g_i @ s_t) * s_i
        elif config.mode == "optimal":
            if m >= fixed.shape[1]:
                break
            s_t = fixed[:, m].copy()

        f_t = prior.cov.apply(np.asarray(A.T @ s_t, dtype=float).reshape(d))
        g_t = _matvec(A, f_t)
        e2 = s_t @ g_t
        if not e2 > 0:
            if not np.any(s_t):
                converged = True
                break
            raise _breakdown(
                f"E^2 = {e2:.3e} at iteration {m + 1}: conjugacy or positivity lost", m + 1, locals()
            )
        e = math.sqrt(e2)
        m += 1
        if config.mode == "sequential":
            alpha = rr / e2
            coeff = rr / e  # s_m^T r_{m-1}
        else:
            coeff = (s_t @ r) / e
            alpha = coeff / e
        x_prev, r_prev = x, r
        x = x + alpha * f_t
        r = r - alpha * g_t
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(r))):
            m -= 1
            x, r = x_prev, r_prev
            raise _breakdown(f"non-finite iterate at iteration {m + 1}", m + 1, locals())
        F_cols.append(f_t / e)
        S_cols.append(s_t / e)
        G_cols.append(g_t / e)
        nu_tilde += coeff * coeff
        nu_hist.append(nu_tilde)
        rr_new = r @ r
        res_hist.append(math.sqrt(rr_new))
        if iterates is not None:
            iterates.append(x.copy())
        if config.drift_every and m % config.drift_every == 0:
            true_r = b - _matvec(A, x)
            gap = float(np.linalg.norm(r - true_r))
            drift.append((m, gap))
            if gap > 1e-6 * max(r_norm0, 1e-300):
                logger.warning("residual drift %.3e at iteration %d", gap, m)
        if res_hist[-1] < config.tol:
            converged = True
            break
        if config.mode == "sequential":
            beta = rr_new / rr
            s_t = r + beta * s_t
        rr = rr_new

    return _assemble(locals())


def _assemble(st):
    d = st["d"]

    def stack(cols):
        return np.column_stack(cols) if cols else np.zeros((d, 0))

    m = st["m"]
    iterates = st["iterates"]
    config = st["config"]
    nu = st["nu_tilde"] / m if m else 0.0
    return GaussianPosterior(
        st["x"], stack(st["F_cols"]), st["prior"], m, np.array(st["res_hist"]), float(nu),
        stack(st["S_cols"]), stack(st["G_cols"]), converged=bool(st["converged"]),
        iterates=None if iterates is None else np.array(iterates),
        info={"mode": config.mode, "drift": st["drift"], "nu_tilde_history": st["nu_hist"],
              "hierarchical": config.hierarchical},
    )


def _breakdown(message, index, state):
    return BreakdownError(message, index=index, partial=_assemble(state))


def bayescg_batch(A, b, prior: Prior, config: Optional[SolveConfig] = None) -> GaussianPosterior:
    """:func:`bayescg` with batch-computed (fully re-orthogonalised) directions."""
    config = replace(config or SolveConfig(), mode="batch")
    return bayescg(A, b, prior, config)


def hierarchical_posterior(g: GaussianPosterior) -> TPosterior:
    """Multivariate-t posterior obtained by marginalising the prior scale.

    Uses the scale estimate ``nu_m`` accumulated by the solver; the
    inverse-gamma marginal of the scale is ``IG(m / 2, m nu_m / 2)``.
    """
    if g.m < 1:
        raise ValueError("the hierarchical posterior needs at least one iteration")
    return TPosterior(g.mean, g.nu, g, g.m)


def termination_sigma(g: GaussianPosterior, d=None):
    """Probabilistic termination diagnostic ``sqrt((d - m) nu_m)``.

    Returns ``nan`` (with a warning) if the product is negative.
    """
    d = g.d if d is None else d
    if g.m > d:
        raise ValueError("m cannot exceed d")
    val = (d - g.m) * g.nu
    if val < 0:
        warnings.warn("negative (d - m) nu_m: scale estimate is not meaningful", RuntimeWarning)
        return float("nan")
    return math.sqrt(val)


def materialize_posterior_cov(g: GaussianPosterior):
    """Explicit ``Sigma_m = Sigma0 - F F^T``, symmetrised."""
    S0 = g.prior.cov.to_dense()
    if g.m == 0:
        return S0.copy()
    S = S0 - g.factor @ g.factor.T
    return 0.5 * (S + S.T)


def conjugacy_matrix(g: GaussianPosterior):
    """``S^T A Sigma0 A^T S`` from the stored directions and images."""
    return g.directions.T @ g.images


def sigma0_norm(prior: Prior, v):
    """``||v||_{Sigma0^{-1}}``."""
    return math.sqrt(max(float(v @ prior.cov.apply_inverse(v)), 0.0))
