"""Calibration statistics for Gaussian and multivariate-t posteriors.

If a posterior ``N(x_m, Sigma_m)`` is well calibrated, the whitened error
of a solution drawn from the reference distribution, restricted to the
range of ``Sigma_m``, is standard normal.  Its squared norm ``Z`` is then
``chi2(d - m)``; the analogous statistic for the t posterior is
``F(d - m, m)``.
"""

from dataclasses import dataclass, field
import io
import json
import math
from typing import Callable, Optional, Sequence
import warnings

import numpy as np
import scipy.special
import scipy.stats

from .exceptions import NotPSDError
from .linalg import psd_eig
from .solver import GaussianPosterior, TPosterior, materialize_posterior_cov

#: Singular values below ``RANK_RTOL * sigma_max`` count as zero.
RANK_RTOL = 1e-8
#: Eigenvalues below ``-PSD_RTOL * lambda_max`` make a covariance unusable.
PSD_RTOL = 1e-6

CSV_SCHEMA = "bayescg.calibration/1"


class RankMismatchWarning(UserWarning):
    """Numerical rank of ``Sigma_m`` differs from ``d - m``."""


def range_basis(cov, expected_rank=None, rank_rtol=RANK_RTOL, psd_rtol=PSD_RTOL):
    """Orthonormal basis of ``range(cov)`` and the matching eigenvalues.

    Raises
    ------
    NotPSDError
        If the smallest eigenvalue is below ``-psd_rtol`` times the largest.
    """
    w, U = psd_eig(cov, sym_tol=1e-8)
    top = w[0] if w.size else 0.0
    if top <= 0:
        r = 0
    else:
        if w[-1] < -psd_rtol * top:
            raise NotPSDError(f"covariance has eigenvalue {w[-1]:.3e} (largest {top:.3e})")
        r = int(np.count_nonzero(w > rank_rtol * top))
    if expected_rank is not None and r != expected_rank:
        warnings.warn(
            f"numerical rank {r} differs from expected {expected_rank}; using {r}",
            RankMismatchWarning,
            stacklevel=2,
        )
    return U[:, :r], w[:r]


def z_statistic(mean, cov, x_star, expected_rank=None):
    """``||D^{-1/2} U_r^T (x* - mean)||^2`` over the numerical range of `cov`."""
    U, D = range_basis(cov, expected_rank)
    e = U.T @ (np.asarray(x_star, dtype=float) - np.asarray(mean, dtype=float))
    return float(np.sum(e * e / D)) if D.size else 0.0


def gaussian_z(post: GaussianPosterior, x_star):
    """Calibration statistic, ``chi2(d - m)`` under perfect calibration."""
    return z_statistic(post.mean, materialize_posterior_cov(post), x_star, post.d - post.m)


def t_z(post: TPosterior, x_star):
    """Calibration statistic for the t posterior, ``F(d - m, m)`` under calibration.

    Raises
    ------
    ValueError
        If ``nu_m = 0`` (degenerate scale).
    """
    if not post.nu > 0:
        raise ValueError("t statistic is undefined for nu_m = 0")
    base = post.base
    k = base.d - base.m
    if k < 1:
        raise ValueError("t statistic needs m < d")
    z = z_statistic(base.mean, materialize_posterior_cov(base), x_star, k)
    return z / (k * post.nu)


def chi2_cdf(x, k):
    """CDF of ``chi2(k)`` via the regularised lower incomplete gamma function."""
    if k < 1:
        raise ValueError("degrees of freedom must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi2_cdf needs x >= 0")
    return scipy.special.gammainc(k / 2.0, x / 2.0)


def f_cdf(x, d1, d2):
    """CDF of ``F(d1, d2)`` via the regularised incomplete beta function."""
    if d1 < 1 or d2 < 1:
        raise ValueError("degrees of freedom must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("f_cdf needs x >= 0")
    return scipy.special.betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def ks_statistic(samples, cdf: Callable):
    """Kolmogorov-Smirnov distance between the samples' ECDF and `cdf`."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("ks_statistic needs at least one sample")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_critical(n, alpha=0.01):
    """Exact one-sample KS critical value at level `alpha`."""
    return float(scipy.stats.kstwo.ppf(1.0 - alpha, n))


def sample_posterior(post: GaussianPosterior, n, seed=None):
    """``n`` draws ``x_m + U D^{1/2} z`` from the (possibly singular) posterior.

    Returns
    -------
    ndarray, shape (n, d)
    """
    U, D = range_basis(materialize_posterior_cov(post))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, D.size))
    return post.mean + (z * np.sqrt(D)) @ U.T


def _finite_or_none(v):
    return v if math.isfinite(v) else None


def reference_cdf(reference, dof):
    if reference == "chi2":
        return lambda x: chi2_cdf(x, dof[0])
    if reference == "F":
        return lambda x: f_cdf(x, dof[0], dof[1])
    raise ValueError(f"unknown reference distribution {reference!r}")


@dataclass
class CalibrationReport:
    """Per-replicate calibration statistics against a reference distribution.

    Attributes
    ----------
    statistics : ndarray
        One ``Z`` per successful replicate.
    reference : str
        ``"chi2"`` or ``"F"``.
    dof : tuple of int
        ``(d - m,)`` or ``(d - m, m)``.
    replicates : ndarray of int
        Replicate index of each statistic.
    n_failed : int
        Replicates aborted because of a non-PSD covariance.
    label : str
    """

    statistics: np.ndarray
    reference: str
    dof: tuple
    replicates: np.ndarray = None
    n_failed: int = 0
    label: str = ""
    alpha: float = 0.01
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.statistics = np.asarray(self.statistics, dtype=float)
        if self.replicates is None:
            self.replicates = np.arange(self.statistics.size)
        self.replicates = np.asarray(self.replicates, dtype=int)
        self.dof = tuple(int(v) for v in self.dof)

    @property
    def cdf(self):
        return reference_cdf(self.reference, self.dof)

    @property
    def ks(self) -> Optional[float]:
        """KS distance, or ``None`` with fewer than 10 statistics."""
        if self.statistics.size < 10:
            return None
        return ks_statistic(self.statistics, self.cdf)

    @property
    def ks_critical(self) -> Optional[float]:
        if self.statistics.size < 10:
            return None
        return ks_critical(self.statistics.size, self.alpha)

    @property
    def ks_pass(self) -> Optional[bool]:
        ks = self.ks
        return None if ks is None else bool(ks < self.ks_critical)

    @property
    def mean(self):
        return float(np.mean(self.statistics)) if self.statistics.size else math.nan

    @property
    def variance(self):
        return float(np.var(self.statistics, ddof=1)) if self.statistics.size > 1 else math.nan

    def histogram(self, bins=50):
        counts, edges = np.histogram(self.statistics, bins=bins)
        return {"counts": counts.tolist(), "edges": edges.tolist()}

    def summary(self):
        return {
            "label": self.label,
            "reference": self.reference,
            "dof": list(self.dof),
            "n": int(self.statistics.size),
            "n_failed": self.n_failed,
            "mean": _finite_or_none(self.mean),
            "variance": _finite_or_none(self.variance),
            "ks": self.ks,
            "ks_critical": self.ks_critical,
            "ks_pass": self.ks_pass,
            "alpha": self.alpha,
            **self.extra,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        """CSV with one row per replicate: ``replicate, z, cdf``."""
        buf = io.StringIO(newline="")
        buf.write(f"# schema: {CSV_SCHEMA}\n")
        buf.write("replicate,z,cdf\n")
        cdf = self.cdf(self.statistics) if self.statistics.size else []
        for i, z, c in zip(self.replicates, self.statistics, cdf):
            buf.write(f"{int(i)},{float(z)!r},{float(c)!r}\n")
        return buf.getvalue()


def calibration_report(stats: Sequence[float], reference, dof, **kw) -> CalibrationReport:
    return CalibrationReport(np.asarray(stats, dtype=float), reference, tuple(dof), **kw)
