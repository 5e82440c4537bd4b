import math

import numpy as np
import pytest
from scipy.stats import chi2 as scipy_chi2

from mapsac.linalg import (DomainError, NotPositiveDefinite, chi2_cdf,
                           chi2_quantile, cholesky, eig_extrema_psd,
                           gammainc_lower, logdet_psd, make_rng, solve_psd,
                           spawn_rngs)


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


class TestCholesky:
    def test_identity(self):
        assert np.allclose(cholesky(np.eye(3)), np.eye(3))

    def test_hand_expanded_2x2(self):
        lower = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        assert np.allclose(lower, [[2.0, 0.0], [1.0, np.sqrt(2.0)]])

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_round_trip_dims_1_to_16(self):
        rng = make_rng(0)
        for n in range(1, 17):
            a = random_spd(rng, n)
            lower = cholesky(a)
            rel = np.linalg.norm(lower @ lower.T - a) / np.linalg.norm(a)
            assert rel < 1e-10


class TestSolvePsd:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        assert np.allclose(solve_psd(np.eye(3), b), b)

    def test_diagonal(self):
        x = solve_psd(np.diag([2.0, 4.0]), np.array([2.0, 4.0]))
        assert np.allclose(x, [1.0, 1.0])

    def test_residual_on_random_5x5(self):
        rng = make_rng(1)
        a = random_spd(rng, 5)
        b = rng.normal(size=5)
        x = solve_psd(a, b)
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-8

    def test_consistency_with_known_solution(self):
        rng = make_rng(2)
        for _ in range(20):
            a = random_spd(rng, 6)
            x = rng.normal(size=6)
            assert np.allclose(solve_psd(a, a @ x), x, atol=1e-8)


class TestLogdet:
    def test_identity(self):
        assert logdet_psd(np.eye(4)) == pytest.approx(0.0, abs=1e-14)

    def test_diagonal(self):
        assert logdet_psd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0))

    def test_matches_eigenvalue_product(self):
        rng = make_rng(3)
        for _ in range(10):
            a = random_spd(rng, 4)
            expected = float(np.sum(np.log(np.linalg.eigvalsh(a))))
            assert logdet_psd(a) == pytest.approx(expected, abs=1e-8)


class TestEigExtrema:
    def test_identity(self):
        assert eig_extrema_psd(np.eye(3)) == (1.0, 1.0)

    def test_diagonal(self):
        lmin, lmax = eig_extrema_psd(np.diag([0.5, 2.0]))
        assert (lmin, lmax) == (0.5, 2.0)

    def test_2x2_closed_form(self):
        rng = make_rng(4)
        for _ in range(25):
            a = random_spd(rng, 2)
            tr = a[0, 0] + a[1, 1]
            det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            disc = math.sqrt(tr * tr / 4.0 - det)
            lmin, lmax = eig_extrema_psd(a)
            assert lmin == pytest.approx(tr / 2.0 - disc, rel=1e-8)
            assert lmax == pytest.approx(tr / 2.0 + disc, rel=1e-8)


class TestChi2:
    def test_d1_p95(self):
        assert chi2_quantile(1, 0.95) == pytest.approx(3.8415, abs=1e-4)

    def test_d2_closed_form(self):
        assert chi2_quantile(2, 0.95) == pytest.approx(-2.0 * math.log(0.05), abs=1e-6)

    def test_d10_p95(self):
        assert chi2_quantile(10, 0.95) == pytest.approx(18.307, abs=1e-3)

    def test_against_scipy(self):
        for d in (1, 2, 3, 5, 10, 20, 64):
            for p in (0.01, 0.1, 0.5, 0.9, 0.95, 0.999):
                assert chi2_quantile(d, p) == pytest.approx(
                    scipy_chi2.ppf(p, d), rel=1e-9, abs=1e-9)

    def test_cdf_round_trip(self):
        for d in (1, 4, 12):
            for p in (0.05, 0.5, 0.99):
                q = chi2_quantile(d, p)
                assert abs(chi2_cdf(q, d) - p) < 1e-6

    def test_monotone_in_p_and_d(self):
        ps = np.linspace(0.05, 0.95, 10)
        for d in (1, 3, 8):
            qs = [chi2_quantile(d, p) for p in ps]
            assert np.all(np.diff(qs) > 0)
        for p in (0.1, 0.5, 0.9):
            qs = [chi2_quantile(d, p) for d in range(1, 12)]
            assert np.all(np.diff(qs) > 0)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            chi2_quantile(3, 0.0)
        with pytest.raises(DomainError):
            chi2_quantile(3, 1.0)
        with pytest.raises(DomainError):
            chi2_quantile(0, 0.5)

    def test_gammainc_against_scipy(self):
        from scipy.special import gammainc as scipy_gammainc
        for a in (0.5, 1.0, 2.5, 10.0):
            for x in (0.0, 0.1, 1.0, 5.0, 40.0):
                assert gammainc_lower(a, x) == pytest.approx(
                    scipy_gammainc(a, x), abs=1e-12)


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = make_rng(123).standard_normal(10_000)
        b = make_rng(123).standard_normal(10_000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_rng(1).standard_normal(10),
                                  make_rng(2).standard_normal(10))

    def test_spawned_streams_deterministic_and_distinct(self):
        first = spawn_rngs(9, 3)
        second = spawn_rngs(9, 3)
        for a, b in zip(first, second):
            assert np.array_equal(a.standard_normal(100), b.standard_normal(100))
        assert not np.array_equal(first[0].standard_normal(10),
                                  first[1].standard_normal(10))
