import numpy as np
import pytest
import scipy.sparse as sp

from bayescg.exceptions import DimensionError, IncompleteCholeskyBreakdown, RankDeficiencyError
from bayescg.linalg import (
    TriangularFactor,
    condition_number,
    densify,
    incomplete_cholesky_zero_fill,
    jacobi_eig,
    matrix_root,
    matvec,
    qr_null_space,
    svd_psd,
    symmetric_eig,
    to_csr,
    weighted_inner,
)
from bayescg.priors import identity_covariance, Prior
from bayescg.solver import SolveConfig, bayescg_batch, materialize_posterior_cov

from conftest import random_spd, random_sparse_spd


class TestMatvec:
    def test_identity(self):
        np.testing.assert_array_equal(matvec(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_diagonal(self):
        np.testing.assert_array_equal(matvec(sp.diags([2.0, 3.0]), [1.0, 1.0]), [2.0, 3.0])

    def test_sparse_matches_dense(self, rng):
        A = sp.random(5, 5, density=0.5, random_state=rng, format="csr")
        v = rng.standard_normal(5)
        np.testing.assert_allclose(matvec(A, v), A.toarray() @ v, rtol=1e-13, atol=1e-15)

    def test_input_untouched(self, rng):
        v = rng.standard_normal(4)
        v0 = v.copy()
        matvec(random_spd(4, rng), v)
        np.testing.assert_array_equal(v, v0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            matvec(np.eye(3), np.ones(2))

    def test_csr_indices_sorted(self, rng):
        A = to_csr(sp.random(20, 20, density=0.3, random_state=rng, format="coo"))
        for i in range(20):
            cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
            assert np.all(np.diff(cols) > 0)


class TestWeightedInner:
    def test_identity(self):
        assert weighted_inner(np.eye(2), np.array([3.0, 4.0]), np.array([3.0, 4.0])) == 25.0

    def test_diagonal(self):
        assert weighted_inner(np.diag([1.0, 2.0]), np.ones(2), np.ones(2)) == 3.0

    def test_matches_triple_product(self, rng):
        M = random_spd(6, rng)
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        np.testing.assert_allclose(weighted_inner(M, x, y), x @ M @ y, rtol=1e-13)
        np.testing.assert_allclose(weighted_inner(lambda v: M @ v, x, y), x @ M @ y, rtol=1e-13)

    def test_symmetric(self, rng):
        M = random_spd(6, rng)
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        a, b = weighted_inner(M, x, y), weighted_inner(M, y, x)
        assert abs(a - b) <= 1e-12 * np.linalg.norm(M) * np.linalg.norm(x) * np.linalg.norm(y)

    def test_positive_on_spd(self, rng):
        for _ in range(20):
            M = random_spd(5, rng)
            x = rng.standard_normal(5)
            assert weighted_inner(M, x, x) > 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            weighted_inner(np.eye(3), np.ones(3), np.ones(2))


class TestIncompleteCholesky:
    def test_diagonal(self):
        L = incomplete_cholesky_zero_fill(sp.diags([4.0, 9.0]))
        np.testing.assert_allclose(L.dense, np.diag([2.0, 3.0]))

    def test_full_pattern_is_exact_cholesky(self, rng):
        A = random_spd(12, rng)
        L = incomplete_cholesky_zero_fill(A)
        np.testing.assert_allclose(L.dense, np.linalg.cholesky(A), atol=1e-12)

    def test_pattern_residual(self, rng):
        A = random_sparse_spd(30, rng)
        L = incomplete_cholesky_zero_fill(A)
        Ld = L.dense
        pattern = A.toarray() != 0
        assert np.all(Ld[~np.tril(pattern)] == 0)
        R = (Ld @ Ld.T - A.toarray())[pattern]
        assert np.abs(R).max() <= 1e-10
        assert L.shift == 0.0

    def test_sparse_path_matches_dense_path(self, rng):
        from bayescg.linalg import _ic0_dense, _ic0_sparse

        A = random_sparse_spd(40, rng)
        np.testing.assert_allclose(_ic0_sparse(A).toarray(), _ic0_dense(A).toarray(), atol=1e-13)

    def test_breakdown_reports_row(self):
        A = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(IncompleteCholeskyBreakdown) as info:
            incomplete_cholesky_zero_fill(A, shifts=())
        assert info.value.index == 1

    def test_shift_restart(self):
        # indefinite on the pattern, rescued by the diagonal shift
        A = np.array([[1.0, 0.999, 0.0], [0.999, 1.0, 0.1], [0.0, 0.1, 0.005]])
        with pytest.raises(IncompleteCholeskyBreakdown):
            incomplete_cholesky_zero_fill(A, shifts=())
        L = incomplete_cholesky_zero_fill(A, shifts=(1.0,))
        assert L.shift == 1.0

    def test_triangular_solves(self, rng):
        A = random_sparse_spd(15, rng)
        L = incomplete_cholesky_zero_fill(A)
        v = rng.standard_normal(15)
        np.testing.assert_allclose(L.dense @ L.solve(v), v, atol=1e-12)
        np.testing.assert_allclose(L.dense.T @ L.solve_transpose(v), v, atol=1e-12)
        np.testing.assert_allclose(L.preconditioner().toarray(), L.dense @ L.dense.T)

    def test_factor_validation(self):
        with pytest.raises(ValueError):
            TriangularFactor(sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])))
        with pytest.raises(ValueError):
            TriangularFactor(sp.csr_matrix(np.array([[-1.0, 0.0], [0.0, 1.0]])))


class TestQRNullSpace:
    def test_first_axis(self):
        K = np.eye(3)[:, :1]
        Q2 = qr_null_space(K)
        assert Q2.shape == (3, 2)
        np.testing.assert_allclose(K.T @ Q2, 0.0, atol=1e-15)
        np.testing.assert_allclose(Q2.T @ Q2, np.eye(2), atol=1e-15)

    def test_symmetry_forced(self):
        Q2 = qr_null_space(np.array([[1.0], [1.0]]) / np.sqrt(2))
        v = Q2[:, 0] * np.sign(Q2[0, 0])
        np.testing.assert_allclose(v, np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_random(self, seed):
        rng = np.random.default_rng(seed)
        K = rng.standard_normal((8, 3))
        Q2 = qr_null_space(K)
        assert Q2.shape == (8, 5)
        assert np.abs(Q2.T @ Q2 - np.eye(5)).max() <= 1e-10
        assert np.abs(K.T @ Q2).max() <= 1e-10

    def test_rank_deficient(self):
        K = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
        with pytest.raises(RankDeficiencyError):
            qr_null_space(K)


class TestSymmetricEig:
    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    def test_diagonal(self, method):
        w, V = symmetric_eig(np.diag([1.0, 3.0]), method=method)
        np.testing.assert_allclose(w, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(V), [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)

    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    def test_swap(self, method):
        w, V = symmetric_eig(np.array([[0.0, 1.0], [1.0, 0.0]]), method=method)
        np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-15)
        v1 = V[:, 0] * np.sign(V[0, 0])
        v2 = V[:, 1] * np.sign(V[0, 1])
        np.testing.assert_allclose(v1, np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-14)
        np.testing.assert_allclose(v2, np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-14)

    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    def test_reconstruction(self, rng, method):
        B = rng.standard_normal((10, 10))
        M = B + B.T
        w, V = symmetric_eig(M, method=method)
        assert np.all(np.diff(w) <= 0)
        assert np.abs((V * w) @ V.T - M).max() <= 1e-9
        assert np.abs(V.T @ V - np.eye(10)).max() <= 1e-10
        assert np.abs(M @ V - V * w).max() <= 1e-10

    def test_jacobi_agrees_with_lapack(self, rng):
        B = rng.standard_normal((15, 15))
        M = B @ B.T
        np.testing.assert_allclose(jacobi_eig(M)[0], symmetric_eig(M)[0], rtol=1e-11, atol=1e-12)

    def test_jacobi_sweep_cap(self, rng):
        B = rng.standard_normal((10, 10))
        from bayescg.exceptions import BreakdownError

        with pytest.raises(BreakdownError):
            jacobi_eig(B + B.T, tol=0.0, max_sweeps=1)


class TestSvdPsd:
    def test_zero(self):
        U, s = svd_psd(np.zeros((3, 3)))
        np.testing.assert_array_equal(s, 0.0)

    def test_diag(self):
        U, s = svd_psd(np.diag([2.0, 0.0]))
        np.testing.assert_allclose(s, [2.0, 0.0])
        np.testing.assert_allclose(np.abs(U), np.eye(2))

    def test_reconstruction(self, rng):
        B = rng.standard_normal((8, 5))
        S = B @ B.T
        U, s = svd_psd(S)
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
        assert np.abs((U * s) @ U.T - S).max() <= 1e-9 * np.abs(S).max()

    def test_posterior_rank(self, rng):
        d, m = 10, 4
        A = random_spd(d, rng)
        prior = Prior(np.zeros(d), identity_covariance(d))
        post = bayescg_batch(A, rng.standard_normal(d), prior, SolveConfig(max_iter=m, tol=0.0))
        _, s = svd_psd(materialize_posterior_cov(post))
        assert np.count_nonzero(s < 1e-8) == m

    def test_asymmetric(self):
        with pytest.raises(ValueError):
            svd_psd(np.array([[1.0, 1.0], [0.0, 1.0]]))


class TestRootsAndConditioning:
    @pytest.mark.parametrize("kind", ["symmetric", "cholesky"])
    def test_root(self, rng, kind):
        M = random_spd(6, rng)
        R = matrix_root(M, kind)
        np.testing.assert_allclose(R.T @ R, M, atol=1e-11)

    def test_symmetric_root_is_symmetric(self, rng):
        R = matrix_root(random_spd(6, rng))
        np.testing.assert_allclose(R, R.T, atol=1e-12)

    def test_condition_number(self):
        assert condition_number(np.diag([1.0, 10.0])) == pytest.approx(10.0)

    def test_densify_sparse(self):
        np.testing.assert_array_equal(densify(sp.eye(2)), np.eye(2))
