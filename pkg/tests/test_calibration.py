import json
import math

import mpmath
import numpy as np
import pytest
import scipy.stats

from bayescg.calibration import (
    CSV_SCHEMA,
    RankMismatchWarning,
    calibration_report,
    chi2_cdf,
    f_cdf,
    gaussian_z,
    ks_critical,
    ks_statistic,
    range_basis,
    sample_posterior,
    t_z,
    z_statistic,
)
from bayescg.exceptions import NotPSDError
from bayescg.priors import Prior, dense_covariance, identity_covariance
from bayescg.solver import (
    SolveConfig,
    bayescg,
    bayescg_batch,
    hierarchical_posterior,
    materialize_posterior_cov,
    optimal_directions,
    posterior_general,
)

from conftest import random_spd


def mp_chi2_cdf(x, k):
    return float(mpmath.gammainc(mpmath.mpf(k) / 2, 0, mpmath.mpf(x) / 2, regularized=True))


def mp_f_cdf(x, d1, d2):
    z = mpmath.mpf(d1) * x / (mpmath.mpf(d1) * x + d2)
    return float(mpmath.betainc(mpmath.mpf(d1) / 2, mpmath.mpf(d2) / 2, 0, z, regularized=True))


class TestReferenceCDFs:
    @pytest.mark.parametrize("k", [1, 2, 5, 17, 90, 400])
    @pytest.mark.parametrize("q", [0.01, 0.3, 1.0, 3.0])
    def test_chi2_against_mpmath(self, k, q):
        x = q * k
        assert chi2_cdf(x, k) == pytest.approx(mp_chi2_cdf(x, k), rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("d1,d2", [(1, 1), (3, 7), (90, 10), (40, 60)])
    @pytest.mark.parametrize("x", [0.05, 0.5, 1.0, 2.5, 10.0])
    def test_f_against_mpmath(self, d1, d2, x):
        assert f_cdf(x, d1, d2) == pytest.approx(mp_f_cdf(x, d1, d2), rel=1e-11, abs=1e-300)

    def test_chi2_two_dof_median(self):
        assert chi2_cdf(2 * math.log(2), 2) == pytest.approx(0.5, rel=1e-14)

    def test_boundaries(self):
        assert chi2_cdf(0.0, 3) == 0.0
        assert f_cdf(0.0, 3, 4) == 0.0
        with pytest.raises(ValueError):
            chi2_cdf(-1.0, 3)
        with pytest.raises(ValueError):
            chi2_cdf(1.0, 0)
        with pytest.raises(ValueError):
            f_cdf(1.0, 0, 2)


class TestKS:
    def test_against_scipy(self, rng):
        x = rng.chisquare(5, size=300)
        ref = scipy.stats.kstest(x, scipy.stats.chi2(5).cdf).statistic
        assert ks_statistic(x, lambda v: chi2_cdf(v, 5)) == pytest.approx(ref, rel=1e-12)

    def test_single_sample(self):
        assert ks_statistic([0.0], lambda v: np.full_like(v, 0.5)) == 0.5

    def test_empty(self):
        with pytest.raises(ValueError):
            ks_statistic([], lambda v: v)

    def test_critical_value_asymptotics(self):
        n = 5000
        assert ks_critical(n) == pytest.approx(1.6276 / math.sqrt(n), rel=5e-3)

    def test_rejects_shifted(self, rng):
        x = rng.chisquare(5, size=500) + 2.0
        assert ks_statistic(x, lambda v: chi2_cdf(v, 5)) > ks_critical(500)


class TestZStatistic:
    def test_exact_solution_gives_zero(self, rng):
        A = random_spd(6, rng)
        x = rng.standard_normal(6)
        post = bayescg_batch(A, A @ x, Prior(np.zeros(6), identity_covariance(6)), SolveConfig(max_iter=3, tol=0.0))
        assert gaussian_z(post, post.mean) == 0.0

    def test_prior_monte_carlo_mean(self, rng):
        d = 10
        S0 = random_spd(d, rng, cond=50.0)
        L = np.linalg.cholesky(S0)
        zs = [z_statistic(np.zeros(d), S0, L @ rng.standard_normal(d)) for _ in range(4000)]
        assert np.mean(zs) == pytest.approx(d, rel=0.03)

    def test_sign_invariance(self, rng):
        d = 6
        S = random_spd(d, rng)
        x = rng.standard_normal(d)
        w, U = np.linalg.eigh(S)
        z1 = np.sum((U.T @ x) ** 2 / w)
        assert z_statistic(np.zeros(d), S, x) == pytest.approx(z1, rel=1e-10)
        assert z_statistic(np.zeros(d), S, x) == pytest.approx(x @ np.linalg.solve(S, x), rel=1e-10)

    def test_singular_covariance(self):
        cov = np.diag([2.0, 0.0, 0.5])
        assert z_statistic(np.zeros(3), cov, [2.0, 100.0, 1.0], expected_rank=2) == pytest.approx(2.0 + 2.0)

    def test_rank_mismatch_warns(self):
        with pytest.warns(RankMismatchWarning):
            U, D = range_basis(np.diag([1.0, 1.0, 0.0]), expected_rank=1)
        assert D.size == 2

    def test_not_psd(self):
        with pytest.raises(NotPSDError):
            z_statistic(np.zeros(2), np.diag([1.0, -0.1]), np.ones(2))

    def test_tiny_negative_eigenvalues_tolerated(self):
        z = z_statistic(np.zeros(2), np.diag([1.0, -1e-9]), [1.0, 5.0], expected_rank=1)
        assert z == 1.0

    def test_zero_covariance(self):
        assert z_statistic(np.zeros(2), np.zeros((2, 2)), np.ones(2), expected_rank=0) == 0.0

    def test_calibrated_harness(self):
        """Truths drawn from the prior, directions independent of them: Z ~ chi2(d - m)."""
        rng = np.random.default_rng(7)
        d, m, n = 40, 10, 300
        A = random_spd(d, rng, cond=100.0)
        prior = Prior(np.zeros(d), identity_covariance(d))
        S = optimal_directions(A, prior, m)
        zs = []
        for _ in range(n):
            x = rng.standard_normal(d)
            zs.append(gaussian_z(posterior_general(A, A @ x, prior, S), x))
        assert ks_statistic(zs, lambda v: chi2_cdf(v, d - m)) < ks_critical(n)

    def test_t_statistic_scaling(self, rng):
        d, m = 20, 5
        A = random_spd(d, rng)
        post = bayescg(A, rng.standard_normal(d), Prior(np.zeros(d), identity_covariance(d)),
                       SolveConfig(max_iter=m, tol=0.0))
        x = rng.standard_normal(d)
        t = hierarchical_posterior(post)
        assert t_z(t, x) == pytest.approx(gaussian_z(post, x) / ((d - m) * post.nu), rel=1e-12)

    def test_t_statistic_zero_nu(self, rng):
        A = random_spd(3, rng)
        post = bayescg(A, np.ones(3), Prior(np.zeros(3), identity_covariance(3)), SolveConfig(max_iter=1, tol=0.0))
        from dataclasses import replace

        with pytest.raises(ValueError):
            t_z(replace(hierarchical_posterior(post), nu=0.0), np.ones(3))


class TestSampling:
    def test_moments(self, rng):
        d = 6
        A = random_spd(d, rng)
        S0 = random_spd(d, rng)
        post = bayescg_batch(A, rng.standard_normal(d), Prior(np.zeros(d), dense_covariance(S0)),
                             SolveConfig(max_iter=2, tol=0.0))
        X = sample_posterior(post, 200_000, seed=3)
        cov = materialize_posterior_cov(post)
        scale = np.sqrt(np.diag(cov).max())
        np.testing.assert_allclose(X.mean(axis=0), post.mean, atol=0.02 * scale)
        np.testing.assert_allclose(np.cov(X.T), cov, atol=0.02 * scale**2)

    def test_draws_stay_in_affine_range(self, rng):
        d = 6
        A = random_spd(d, rng)
        post = bayescg_batch(A, rng.standard_normal(d), Prior(np.zeros(d), identity_covariance(d)),
                             SolveConfig(max_iter=2, tol=0.0))
        X = sample_posterior(post, 10, seed=0)
        np.testing.assert_allclose((X - post.mean) @ A.T @ post.directions, 0.0, atol=1e-10)


class TestReport:
    def test_small_n(self):
        rep = calibration_report([1.0], "chi2", (3,))
        assert rep.ks is None and rep.ks_pass is None
        s = rep.summary()
        assert s["variance"] is None and s["n"] == 1
        json.loads(rep.to_json())

    def test_summary_and_csv(self, rng):
        zs = rng.chisquare(4, size=50)
        rep = calibration_report(zs, "chi2", (4,), label="x")
        s = rep.summary()
        assert s["mean"] == pytest.approx(zs.mean())
        assert s["ks"] == pytest.approx(ks_statistic(zs, lambda v: chi2_cdf(v, 4)))
        lines = rep.to_csv().splitlines()
        assert lines[0] == f"# schema: {CSV_SCHEMA}"
        assert lines[1] == "replicate,z,cdf"
        assert len(lines) == 52
        i, z, c = lines[2].split(",")
        assert float(z) == zs[0] and float(c) == chi2_cdf(zs[0], 4)
        assert sum(rep.histogram(bins=10)["counts"]) == 50

    def test_f_reference(self):
        rep = calibration_report(np.linspace(0.1, 3, 20), "F", (5, 7))
        assert rep.cdf(1.0) == f_cdf(1.0, 5, 7)
        with pytest.raises(ValueError):
            calibration_report([1.0], "normal", (1,)).cdf
