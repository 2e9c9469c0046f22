"""Exception hierarchy shared by the package."""

import numpy as np


class BayesCGError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BayesCGError, ValueError):
    """Operands do not have conforming shapes."""


class BreakdownError(BayesCGError, np.linalg.LinAlgError):
    """An iteration or factorization could not continue.

    Attributes
    ----------
    index : int or None
        Iteration number or matrix row at which the breakdown happened.
    partial : object or None
        Result accumulated before the breakdown, when the raiser has one.
    """

    def __init__(self, message, index=None, partial=None):
        super().__init__(message)
        self.index = index
        self.partial = partial


class IncompleteCholeskyBreakdown(BreakdownError):
    """Non-positive pivot met during incomplete Cholesky."""


class RankDeficiencyError(BayesCGError, np.linalg.LinAlgError):
    """A matrix expected to have full column rank does not."""


class NotPSDError(BayesCGError, ValueError):
    """A covariance has eigenvalues below the permitted negative tolerance."""


class SingularGramError(BayesCGError, np.linalg.LinAlgError):
    """The Gram matrix of the observations could not be factorized."""
