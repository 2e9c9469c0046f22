"""Matrix Market reading and writing.

Thin wrappers over :mod:`scipy.io` that normalise the returned types:
sparse matrices come back as sorted CSR, vectors as 1-d arrays.
"""

import io
import os

import numpy as np
import scipy.io
import scipy.sparse as sp

from .linalg import to_csr


def read_matrix(path):
    """Read a matrix.  Coordinate files give CSR, array files give ndarray.

    ``symmetric`` files are expanded by scipy, mirroring the stored lower
    triangle.
    """
    M = scipy.io.mmread(os.fspath(path))
    if sp.issparse(M):
        return to_csr(M)
    return np.asarray(M, dtype=float)


def read_vector(path):
    """Read a vector stored either as a ``d x 1`` array or coordinate file."""
    M = read_matrix(path)
    if sp.issparse(M):
        M = M.toarray()
    if M.ndim == 2 and 1 not in M.shape:
        raise ValueError(f"{path} holds a {M.shape} matrix, not a vector")
    return np.asarray(M, dtype=float).reshape(-1)


def _write(target, obj, symmetry=None):
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, obj, symmetry=symmetry, precision=17)
    data = buf.getvalue()
    with open(target, "wb") as fh:
        fh.write(data)


def write_matrix(path, A, symmetric=None):
    """Write a dense or sparse matrix.

    Sparse input is written in coordinate format.  When `symmetric` is
    true only the lower triangle is stored with the ``symmetric``
    qualifier; ``None`` detects exact symmetry.
    """
    if sp.issparse(A):
        A = to_csr(A)
        if symmetric is None:
            symmetric = (A - A.T).nnz == 0
        obj = sp.coo_matrix(A)
    else:
        obj = np.asarray(A, dtype=float)
        if symmetric is None:
            symmetric = obj.shape[0] == obj.shape[1] and np.array_equal(obj, obj.T)
    _write(path, obj, symmetry="symmetric" if symmetric else "general")


def write_vector(path, v):
    """Write a vector as a ``d x 1`` array file."""
    v = np.asarray(v, dtype=float).reshape(-1, 1)
    _write(path, v, symmetry="general")
