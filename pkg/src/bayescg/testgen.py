"""Reproducible test problems.

Random numbers come from numpy's counter-based ``Philox`` bit generator.
Independent per-replicate streams are derived from a master seed through
``SeedSequence`` spawn keys, so replicate ``i`` sees the same numbers no
matter how many workers run or in which order.
"""

from dataclasses import asdict, dataclass
import json
import os
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .linalg import to_csr
from .mmio import write_matrix, write_vector

FAMILIES = ("sparse_spd", "poisson2d")


def rng(seed, *key):
    """Philox generator for `seed`, optionally on the sub-stream `key`."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ProblemFamily:
    """Parameters of a family of generated systems.

    Attributes
    ----------
    d : int
        Dimension (for ``poisson2d``, ``d = n_grid**2``).
    density : float
        Target fraction of structural non-zeros.
    eig_rate : float
        Rate ``gamma`` of the exponential eigenvalue distribution (mean
        ``1 / gamma``).
    seed : int
    family : str
        ``"sparse_spd"`` or ``"poisson2d"``.
    """

    d: int = 100
    density: float = 0.2
    eig_rate: float = 10.0
    seed: int = 0
    family: str = "sparse_spd"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.d < 1 or (self.family == "sparse_spd" and self.d < 2):
            raise ValueError("d must be at least 2")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.family == "sparse_spd" and self.density * self.d**2 < self.d:
            raise ValueError("density too small to hold the diagonal")
        if self.eig_rate <= 0:
            raise ValueError("eig_rate must be positive")
        if self.family == "poisson2d" and round(self.d**0.5) ** 2 != self.d:
            raise ValueError("poisson2d needs a square d")

    def to_dict(self):
        return asdict(self)


def _givens_sweep(A, gen, target_nnz, max_rot):
    """Rotate dense symmetric `A` in random planes until `target_nnz` is reached."""
    d = A.shape[0]
    for _ in range(max_rot):
        if np.count_nonzero(A) >= target_nnz:
            break
        i, j = gen.choice(d, size=2, replace=False)
        theta = gen.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        ri, rj = A[i].copy(), A[j].copy()
        A[i], A[j] = c * ri - s * rj, s * ri + c * rj
        ci, cj = A[:, i].copy(), A[:, j].copy()
        A[:, i], A[:, j] = c * ci - s * cj, s * ci + c * cj
    return A


def random_spd_sparse(fam: ProblemFamily):
    """Sparse SPD matrix with exponentially distributed eigenvalues.

    Starts from ``diag(lambda)`` and applies random Givens similarity
    rotations until the target density is reached, so the spectrum is
    preserved up to rounding.  The achieved density is within
    ``max(0.05, 4/d)`` of the target.  ``density = 1`` uses a Haar-random
    orthogonal ``Q`` and returns ``Q diag(lambda) Q^T``.

    Returns
    -------
    A : scipy.sparse.csr_matrix
    eigenvalues : ndarray
        The drawn eigenvalues, sorted descending.
    """
    if fam.family != "sparse_spd":
        raise ValueError("random_spd_sparse needs family 'sparse_spd'")
    d = fam.d
    gen = rng(fam.seed)
    lam = np.sort(gen.exponential(1.0 / fam.eig_rate, size=d))[::-1]
    if fam.density >= 1.0:
        Z = gen.standard_normal((d, d))
        Q, R = np.linalg.qr(Z)
        Q = Q * np.sign(np.diag(R))
        A = (Q * lam) @ Q.T
    else:
        target = int(round(fam.density * d * d))
        A = _givens_sweep(np.diag(lam), gen, target, max_rot=50 * d)
        density = np.count_nonzero(A) / d**2
        # one rotation can fill two whole rows and columns
        if abs(density - fam.density) > max(0.05, 4.0 / d):
            raise ValueError(f"could not reach density {fam.density} (got {density:.3f})")
    A = 0.5 * (A + A.T)
    return to_csr(sp.csr_matrix(A)), lam


def draw_truth_and_rhs(A, seed, *key):
    """``x* ~ N(0, I)`` and ``b = A x*`` from the stream ``(seed, *key)``."""
    x = rng(seed, *key).standard_normal(A.shape[0])
    return x, np.asarray(A @ x, dtype=float).reshape(-1)


def poisson2d(n_grid):
    """Five-point Laplacian on an ``n x n`` interior grid (``d = n**2``)."""
    if n_grid < 1:
        raise ValueError("n_grid must be positive")
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n_grid, n_grid))
    I = sp.identity(n_grid)
    return to_csr(sp.kron(I, T) + sp.kron(T, I))


def generate(fam: ProblemFamily):
    """Matrix and (where known) eigenvalues for `fam`."""
    if fam.family == "poisson2d":
        n = round(fam.d**0.5)
        i = np.arange(1, n + 1)
        ev = 4.0 - 2.0 * np.cos(np.pi * i / (n + 1))[:, None] - 2.0 * np.cos(np.pi * i / (n + 1))[None, :]
        return poisson2d(n), np.sort(ev.ravel())[::-1]
    return random_spd_sparse(fam)


def write_problem(fam: ProblemFamily, out_dir, stem="A", rhs_seed: Optional[int] = None):
    """Write ``stem.mtx`` plus a ``stem.json`` sidecar; optionally ``b``/``x*``.

    Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    A, ev = generate(fam)
    paths = {"matrix": out / f"{stem}.mtx", "sidecar": out / f"{stem}.json"}
    write_matrix(paths["matrix"], A, symmetric=True)
    meta = {**fam.to_dict(), "gamma": fam.eig_rate, "eigenvalues": ev.tolist()}
    with open(paths["sidecar"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    if rhs_seed is not None:
        x, b = draw_truth_and_rhs(A, rhs_seed)
        paths["rhs"], paths["truth"] = out / "b.mtx", out / "x_star.mtx"
        write_vector(paths["rhs"], b)
        write_vector(paths["truth"], x)
    return {k: os.fspath(v) for k, v in paths.items()}
