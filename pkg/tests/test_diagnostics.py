import numpy as np
import pytest

from itergauss import diagnostics, rng as rngmod, scorepca, targets
from itergauss.gaussianize import RotationStrategy
from itergauss.transforms import Rotation


class TestGaussianKl:
    def test_analytic_values(self):
        assert diagnostics.kl_gaussian_analytic([1.0, 1.0, 1.0]) == 0.0
        expected = 0.5 * ((np.log(2.0) + 0.5 - 1.0) + (np.log(0.5) + 2.0 - 1.0))
        assert diagnostics.kl_gaussian_analytic([2.0, 0.5]) == pytest.approx(expected)
        assert expected == pytest.approx(0.25)
        with pytest.raises(ValueError):
            diagnostics.kl_gaussian_analytic([1.0, -0.5])

    def test_matches_mc_reverse_kl(self):
        # identity chain against a diagonal Gaussian target: MC cross-check
        from itergauss.mfvi import reverse_kl_terms
        from itergauss.transforms import AffineMap

        lam = np.array([2.0, 0.5])
        t = targets.GaussianTarget(np.zeros(2), np.diag(lam))
        z = rngmod.stream(1).standard_normal((8000, 2))
        terms = reverse_kl_terms(AffineMap.identity(2), t, z)
        constant = 0.5 * np.sum(np.log(lam)) + np.log(2 * np.pi)
        corrected = terms + constant
        se = corrected.std(ddof=1) / np.sqrt(len(corrected))
        assert abs(corrected.mean() - diagnostics.kl_gaussian_analytic(lam)) <= 3 * se


class TestKlAfterMf:
    def _target(self, d, kappa, seed):
        return targets.make_mf_stationary_gaussian(d, kappa, rngmod.stream(seed))

    def test_diagonalizing_rotation_gives_zero(self):
        t = self._target(4, 6.0, 2)
        eig = scorepca.eig_sym(np.eye(4) - t.precision)
        rot, _ = scorepca.select_rotation(eig, 1.0)
        assert diagnostics.kl_gaussian_after_mf(t.covariance, rot) == pytest.approx(
            0.0, abs=1e-10)

    def test_identity_rotation_no_improvement(self):
        t = self._target(4, 6.0, 3)
        lam = scorepca.eig_sym(t.covariance).values
        assert diagnostics.kl_gaussian_after_mf(t.covariance, Rotation.identity(4)) \
            == pytest.approx(diagnostics.kl_gaussian_analytic(lam), abs=1e-9)

    def test_requires_unit_precision_diagonal(self):
        t = targets.make_conditioned_gaussian(3, 4.0, rngmod.stream(4))
        with pytest.raises(ValueError):
            diagnostics.kl_gaussian_after_mf(t.covariance, Rotation.identity(3))

    def test_haar_average_contraction(self):
        # small version of the contraction bound (full grid in acceptance)
        d, kappa = 4, 4.0
        t = self._target(d, kappa, 5)
        lam = scorepca.eig_sym(t.covariance).values
        kl0 = diagnostics.kl_gaussian_analytic(lam)
        r = rngmod.stream(6)
        vals = np.array([
            diagnostics.kl_gaussian_after_mf(t.covariance,
                                             scorepca.sample_haar_rotation(d, r))
            for _ in range(2000)])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        factor = 1.0 - 2.0 / ((d + 2) * kappa**2)
        assert vals.mean() <= factor * kl0 + 3 * se


class TestExactRecursion:
    def test_update_preserves_unit_precision_diagonal(self):
        t = targets.make_conditioned_gaussian(3, 5.0, rngmod.stream(7))
        rot = scorepca.sample_haar_rotation(3, rngmod.stream(8))
        cov, kl = diagnostics.gaussian_mf_update(t.covariance, rot)
        np.testing.assert_allclose(np.diag(np.linalg.inv(cov)), 1.0, atol=1e-10)
        assert kl == pytest.approx(diagnostics.kl_gamma_vs_gaussian(cov), abs=1e-10)

    def test_kl_never_increases_for_any_rotation(self):
        r = rngmod.stream(9)
        t = targets.make_conditioned_gaussian(4, 8.0, r)
        cov = np.array(t.covariance)
        kl = diagnostics.kl_gamma_vs_gaussian(cov)
        for _ in range(30):
            rot = scorepca.sample_haar_rotation(4, r)
            cov, kl_next = diagnostics.gaussian_mf_update(cov, rot)
            assert kl_next <= kl + 1e-12
            kl = kl_next

    def test_iterations_to_threshold_cases(self):
        cell = diagnostics.iterations_to_threshold(2, 1.0, RotationStrategy.pca(),
                                                   replicates=5, seed=10)
        assert cell.mean_iters == 0.0
        for kappa in (2.0, 4.0, 10.0):
            cell = diagnostics.iterations_to_threshold(
                2, kappa, RotationStrategy.pca(), replicates=10, seed=11)
            assert cell.mean_iters == 1.0
        small = diagnostics.iterations_to_threshold(4, 4.0, RotationStrategy.random(),
                                                    replicates=10, seed=12)
        large = diagnostics.iterations_to_threshold(16, 4.0, RotationStrategy.random(),
                                                    replicates=10, seed=12)
        assert large.mean_iters > small.mean_iters

    def test_identity_strategy_censors(self):
        cell = diagnostics.iterations_to_threshold(3, 4.0, RotationStrategy.identity(),
                                                   replicates=2, seed=13, max_iters=50)
        assert cell.censored == 2


class TestChainGaussianKl:
    def test_exact_vs_analytic_for_manual_chain(self):
        from itergauss.transforms import (AffineMap, TransportChain,
                                          TransportLayer)

        lam = np.array([4.0, 0.25])
        t = targets.GaussianTarget(np.zeros(2), np.diag(lam))
        chain = TransportChain(2, [TransportLayer(
            Rotation.identity(2), AffineMap.from_shift_scale([0.0, 0.0], [2.0, 0.5]))])
        assert diagnostics.chain_gaussian_kl(chain, t) == pytest.approx(0.0, abs=1e-12)
        empty = TransportChain(2)
        assert diagnostics.chain_gaussian_kl(empty, t) == pytest.approx(
            diagnostics.kl_gaussian_analytic(lam))


class TestMmd:
    def test_same_set_nonpositive(self, rng):
        x = rng.normal(size=(100, 2))
        assert diagnostics.mmd_unbiased(x, x.copy()) <= 0.0

    def test_null_within_permutation_se(self):
        r = rngmod.stream(14)
        x = r.normal(size=(300, 2))
        y = r.normal(size=(300, 2))
        value = diagnostics.mmd_unbiased(x, y)
        pooled = np.concatenate([x, y])
        perm_vals = []
        for _ in range(100):
            idx = r.permutation(600)
            perm_vals.append(diagnostics.mmd_unbiased(pooled[idx[:300]],
                                                      pooled[idx[300:]]))
        se = np.std(perm_vals, ddof=1)
        assert abs(value) <= 3 * se

    def test_separated_samples_detected_at_5_sigma(self):
        r = rngmod.stream(15)
        x = r.normal(size=(500, 1))
        y = r.normal(size=(500, 1)) + 5.0
        value = diagnostics.mmd_unbiased(x, y)
        pooled = np.concatenate([x, y])
        perm_vals = []
        for _ in range(100):
            idx = r.permutation(1000)
            perm_vals.append(diagnostics.mmd_unbiased(pooled[idx[:500]],
                                                      pooled[idx[500:]]))
        assert value > 5 * np.std(perm_vals, ddof=1)

    def test_permutation_invariance_in_arguments(self, rng):
        x = rng.normal(size=(60, 2))
        y = rng.normal(size=(50, 2))
        h = diagnostics.median_bandwidth(x, y)
        v1 = diagnostics.mmd_unbiased(x, y, bandwidth=h)
        v2 = diagnostics.mmd_unbiased(x[rng.permutation(60)],
                                      y[rng.permutation(50)], bandwidth=h)
        assert v1 == pytest.approx(v2, rel=1e-12)

    def test_degenerate_sample_bandwidth_floor(self):
        x = np.zeros((5, 1))
        assert np.isfinite(diagnostics.mmd_unbiased(x, x))


class TestKsd:
    def test_stein_kernel_fixture_at_gamma_mode(self):
        # two copies of the mode of gamma: score is zero, so the Stein
        # kernel value is the trace term d * (c^2)^{-3/2}
        d = 3
        x = np.zeros((2, d))
        scores = np.zeros((2, d))
        k = diagnostics.stein_kernel_imq(x, scores, c=1.0)
        np.testing.assert_allclose(k, d)
        k2 = diagnostics.stein_kernel_imq(x, scores, c=2.0)
        np.testing.assert_allclose(k2, d * 2.0**-3)

    def test_rate_decreases_like_sqrt_n(self):
        t = targets.GaussianTarget(np.zeros(2), np.eye(2))
        r = rngmod.stream(16)
        vals = {}
        for n in (100, 400, 1600):
            vals[n] = diagnostics.ksd(t.sample(n, r), t.score)
        assert vals[1600] < vals[400] < vals[100]
        # sqrt-n rate within a broad factor
        assert vals[100] / vals[1600] == pytest.approx(4.0, rel=0.8)

    def test_shifted_sample_detected(self):
        t = targets.GaussianTarget(np.zeros(2), np.eye(2))
        r = rngmod.stream(17)
        x = t.sample(400, r)
        matched = diagnostics.ksd(x, t.score)
        assert diagnostics.ksd(x + 3.0, t.score) >= 5 * matched

    def test_permutation_invariance(self, rng):
        t = targets.GaussianTarget(np.zeros(2), np.eye(2))
        x = t.sample(100, rng)
        v1 = diagnostics.ksd(x, t.score)
        v2 = diagnostics.ksd(x[rng.permutation(100)], t.score)
        assert v1 == pytest.approx(v2, rel=1e-12)


class TestEss:
    def test_uniform_weights(self):
        assert diagnostics.ess(np.full(50, 1 / 50)) == pytest.approx(50.0)

    def test_one_hot(self):
        w = np.zeros(10)
        w[3] = 1.0
        assert diagnostics.ess(w) == pytest.approx(1.0)

    def test_hand_value(self):
        w = np.array([2.0, 1.0, 1.0])
        assert diagnostics.ess(w / w.sum()) == pytest.approx(16.0 / 6.0)

    def test_requires_normalized(self):
        with pytest.raises(ValueError):
            diagnostics.ess(np.array([2.0, 1.0]))

    def test_permutation_invariance(self, rng):
        w = rng.random(20)
        w /= w.sum()
        assert diagnostics.ess(w) == pytest.approx(diagnostics.ess(w[rng.permutation(20)]))


class TestReferenceSampler:
    def test_rwm_matches_gaussian_moments(self):
        t = targets.GaussianTarget(np.zeros(2), np.array([[2.0, 0.8], [0.8, 1.0]]))
        samples = diagnostics.preconditioned_rwm(
            t, 4000, rngmod.stream(18), t.covariance, burn=1000, thin=5)
        assert samples.shape == (4000, 2)
        np.testing.assert_allclose(samples.mean(axis=0), 0.0, atol=0.15)
        np.testing.assert_allclose(np.cov(samples.T), t.covariance, atol=0.25)


class TestMetricsCsv:
    def test_column_order_and_formatting(self):
        rec = diagnostics.MetricsRecord("run0", 2, 1.25, None, 0.5, 10.0, None)
        lines = diagnostics.metrics_csv_lines([rec], "hash=abc")
        assert lines[0] == "# hash=abc"
        assert lines[1] == "run_id,k,elbo,mmd,ksd,ess,kl_analytic"
        assert lines[2] == "run0,2,1.25,,0.5,10,"
