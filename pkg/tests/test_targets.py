import math

import numpy as np
import pytest

from itergauss import rng as rngmod
from itergauss import targets
from itergauss.scorepca import eig_sym

from conftest import finite_diff_score


class TestGaussianTarget:
    def test_log_density_standard_cases(self):
        t = targets.GaussianTarget(np.zeros(2), np.eye(2))
        assert t.log_density(np.zeros(2)) == 0.0
        assert t.log_density(np.array([1.0, 1.0])) == pytest.approx(-1.0)

    def test_log_density_correlated_hand_value(self):
        prec = np.array([[1.0, 0.5], [0.5, 1.0]])
        t = targets.GaussianTarget(np.zeros(2), np.linalg.inv(prec))
        # -0.5 * (1 + 0.5 + 0.5 + 1)
        assert t.log_density(np.array([1.0, 1.0])) == pytest.approx(-1.5, abs=1e-12)

    def test_score_cases(self):
        t = targets.GaussianTarget(np.zeros(2), np.eye(2))
        np.testing.assert_allclose(t.score(np.array([2.0, -3.0])), [-2.0, 3.0])
        t2 = targets.GaussianTarget(np.array([1.0, 0.0]), np.eye(2))
        np.testing.assert_allclose(t2.score(np.array([1.0, 0.0])), [0.0, 0.0])
        prec = np.array([[1.0, 0.5], [0.5, 1.0]])
        t3 = targets.GaussianTarget(np.zeros(2), np.linalg.inv(prec))
        np.testing.assert_allclose(t3.score(np.array([1.0, 1.0])), [-1.5, -1.5],
                                   atol=1e-12)

    def test_cached_inverse_and_cholesky_consistent(self, rng):
        t = targets.make_conditioned_gaussian(5, 20.0, rng)
        d = t.dim
        assert np.abs(t.covariance @ t.precision - np.eye(d)).max() <= 1e-10
        assert np.abs(t.chol @ t.chol.T - t.covariance).max() <= 1e-10

    def test_dimension_mismatch_raises(self):
        t = targets.GaussianTarget(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            t.log_density(np.zeros(3))


class TestConditionedGaussian:
    def test_kappa_one_gives_identity(self, rng):
        t = targets.make_conditioned_gaussian(2, 1.0, rng)
        np.testing.assert_allclose(t.covariance, np.eye(2), atol=1e-12)

    def test_log_spaced_eigenvalues(self, rng):
        t = targets.make_conditioned_gaussian(3, 4.0, rng)
        eig = eig_sym(t.covariance)
        np.testing.assert_allclose(sorted(eig.values), [0.5, 1.0, 2.0], atol=1e-10)

    def test_condition_number_exact(self, rng):
        for d, kappa in [(2, 3.0), (6, 10.0), (4, 1.5)]:
            t = targets.make_conditioned_gaussian(d, kappa, rng)
            assert np.abs(t.covariance - t.covariance.T).max() <= 1e-12
            lam = np.sort(eig_sym(t.covariance).values)
            assert lam[-1] / lam[0] == pytest.approx(kappa, abs=1e-8)

    def test_rejects_bad_kappa(self, rng):
        with pytest.raises(ValueError):
            targets.make_conditioned_gaussian(2, 0.5, rng)


class TestUnitPrecisionGaussians:
    def test_wishart_construction_unit_precision_diag(self, rng):
        t = targets.make_unit_precision_gaussian(3, rng)
        np.testing.assert_allclose(np.diag(t.precision), 1.0, atol=1e-10)

    def test_hadamard_construction_diag_and_condition(self, rng):
        for d, kappa in [(2, 4.0), (4, 10.0), (8, 1.5)]:
            t = targets.make_mf_stationary_gaussian(d, kappa, rng)
            np.testing.assert_allclose(np.diag(t.precision), 1.0, atol=1e-10)
            lam = np.sort(eig_sym(t.covariance).values)
            assert lam[-1] / lam[0] == pytest.approx(kappa, rel=1e-10)

    def test_hadamard_needs_power_of_two(self, rng):
        with pytest.raises(ValueError):
            targets.make_mf_stationary_gaussian(3, 4.0, rng)


class TestLogisticTarget:
    def test_zero_logit_case(self):
        t = targets.LogisticRegressionTarget(np.zeros((1, 3)), [1.0], 2.0)
        beta = np.array([0.3, -0.2, 1.0])
        expected = math.log(0.5) - beta @ beta / 8.0
        assert t.log_density(beta) == pytest.approx(expected, rel=1e-12)

    def test_beta_zero_gives_n_log_half(self, rng):
        t = targets.make_synthetic_logistic(rng)
        assert t.log_density(np.zeros(10)) == pytest.approx(20 * math.log(0.5))

    def test_scalar_hand_value(self):
        # log S(2) - ||beta||^2 / (2 sigma^2) computed by scalar arithmetic
        t = targets.LogisticRegressionTarget(np.array([[1.0, 0.0]]), [1.0], 2.0)
        expected = math.log(1.0 / (1.0 + math.exp(-2.0))) - 0.5
        assert expected == pytest.approx(-0.6269280110429727, rel=1e-10)
        assert t.log_density(np.array([2.0, 0.0])) == pytest.approx(expected, rel=1e-12)

    def test_score_half_case(self):
        t = targets.LogisticRegressionTarget(np.array([[1.0, 0.0]]), [1.0], 2.0)
        np.testing.assert_allclose(t.score(np.zeros(2)), [0.5, 0.0])

    def test_score_balanced_data_zero(self):
        design = np.array([[1.0, 2.0], [-1.0, -2.0]])
        t = targets.LogisticRegressionTarget(design, [1.0, 1.0], 2.0)
        # sum (y_i - 1/2) x_i = 0 for this pairing
        np.testing.assert_allclose(t.score(np.zeros(2)), 0.0, atol=1e-14)

    def test_no_overflow_for_large_logits(self):
        t = targets.LogisticRegressionTarget(np.array([[1.0]]), [0.0], 2.0)
        assert np.isfinite(t.log_density(np.array([500.0])))

    def test_label_validation(self):
        with pytest.raises(ValueError):
            targets.LogisticRegressionTarget(np.ones((2, 1)), [0.5, 1.0], 2.0)


class TestPaperLogistic:
    def test_shapes_and_spectrum(self, rng):
        t = targets.make_synthetic_logistic(rng)
        assert t.design.shape == (20, 10)
        assert t.prior_sigma == 2.0
        cov_x = t.design.T @ t.design / 20
        assert np.all(np.isfinite(cov_x))

    def test_covariate_spectrum_endpoints(self):
        dvals = np.exp(np.linspace(np.log(0.1), np.log(10.0), 10))
        assert dvals[0] == pytest.approx(0.1)
        assert dvals[-1] == pytest.approx(10.0)

    def test_label_mean_over_seeds(self):
        means = [targets.make_synthetic_logistic(rngmod.stream(s)).labels.mean()
                 for s in range(200)]
        # Bernoulli(1/2): SE of the grand mean over 200*20 draws ~ 0.0079
        assert np.mean(means) == pytest.approx(0.5, abs=3 * 0.0079)


class TestScoreMatchesFiniteDifferences:
    def test_all_builtin_targets(self, rng):
        cases = [
            targets.GaussianTarget(np.array([0.5, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]])),
            targets.make_conditioned_gaussian(4, 6.0, rng),
            targets.make_synthetic_logistic(rng),
            targets.make_unit_precision_gaussian(3, rng),
        ]
        for t in cases:
            for _ in range(20):
                x = rng.normal(size=t.dim)
                fd = finite_diff_score(t, x)
                np.testing.assert_allclose(t.score(x), fd, rtol=1e-4, atol=1e-6)


class TestLaplaceStandardize:
    def test_exact_for_gaussian(self):
        cov = np.array([[2.0, 0.7], [0.7, 1.0]])
        mu = np.array([1.0, -2.0])
        t = targets.GaussianTarget(mu, cov)
        std, shift, scale = targets.laplace_standardize(t)
        np.testing.assert_allclose(shift, mu, atol=1e-5)
        np.testing.assert_allclose(scale, np.sqrt(np.diag(cov)), rtol=1e-5)
        np.testing.assert_allclose(std.score(np.zeros(2)), 0.0, atol=1e-5)

    def test_standardized_gaussian_unit_diagonal_variance(self):
        cov = np.array([[2.0, 0.7], [0.7, 1.0]])
        t = targets.GaussianTarget(np.zeros(2), cov)
        _, _, scale = targets.laplace_standardize(t)
        std_cov = cov / np.outer(scale, scale)
        np.testing.assert_allclose(np.diag(std_cov), 1.0, rtol=1e-5)

    def test_logistic_mode_converges(self, rng):
        t = targets.make_synthetic_logistic(rng)
        mode = targets.find_mode(t)
        assert np.abs(t.score(mode)).max() < 1e-6

    def test_standardized_score_chain_rule(self, rng):
        t = targets.make_synthetic_logistic(rng)
        std, _, _ = targets.laplace_standardize(t)
        y = rng.normal(size=10)
        fd = finite_diff_score(std, y)
        np.testing.assert_allclose(std.score(y), fd, rtol=1e-4, atol=1e-6)

    def test_nonconvex_coordinate_falls_back_to_unit_scale(self):
        # bimodal in x0: potential has negative curvature at the saddle x=0
        def logp(x):
            return -0.25 * x[:, 0] ** 4 + 0.5 * x[:, 0] ** 2 - 0.5 * x[:, 1] ** 2

        def score(x):
            return np.column_stack([-x[:, 0] ** 3 + x[:, 0], -x[:, 1]])

        t = targets.FunctionTarget(2, logp, score)
        std, shift, scale = targets.laplace_standardize(
            t, targets.LaplaceOptions(max_steps=5, newton_polish_steps=0))
        # mode finder stays at the saddle (score(0) = 0); Hessian there is
        # indefinite so the offending coordinate keeps scale 1
        assert scale[0] == 1.0


class TestTargetSerialization:
    def test_gaussian_round_trip(self, rng):
        t = targets.make_conditioned_gaussian(3, 5.0, rng)
        t2 = targets.target_from_dict(targets.target_to_dict(t))
        np.testing.assert_array_equal(t.covariance, t2.covariance)
        np.testing.assert_array_equal(t.mean, t2.mean)

    def test_logistic_round_trip(self, rng):
        t = targets.make_synthetic_logistic(rng)
        t2 = targets.target_from_dict(targets.target_to_dict(t))
        np.testing.assert_array_equal(t.design, t2.design)
        np.testing.assert_array_equal(t.labels, t2.labels)
        assert t.prior_sigma == t2.prior_sigma
