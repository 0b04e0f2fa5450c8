import math
import unittest

import numpy as np
import numpy.testing as npt
import pytest

from iceline import frozen
from iceline.frozen import DegenerateModelError, StabilityError
from iceline.model import LatitudeGrid, ModelParams, NoiseSpec, mean_forcing, sigma_field


class TestClosedForms(unittest.TestCase):
    params = ModelParams()
    noise = NoiseSpec.standard()

    def test_var_zeta_at_equator(self):
        """Var zeta = (pi/2)^2 / (2 (A - B)) when the ice line sits at the equator"""
        law = frozen.stationary_law(self.params, self.noise, 0.0)
        self.assertAlmostEqual(law.var_zeta, (math.pi / 2) ** 2 / (2 * 1.9 / 12.6), places=4)
        self.assertAlmostEqual(law.var_zeta, 8.181, places=2)

    def test_noiseless_law(self):
        noise = NoiseSpec.from_names(field="zero")
        law = frozen.stationary_law(self.params, noise, 0.5)
        self.assertEqual((law.var_xi, law.var_zeta, law.cov_xi_zeta), (0.0, 0.0, 0.0))
        self.assertTrue(law.is_degenerate)

    def test_stationary_means(self):
        law = frozen.stationary_law(self.params, self.noise, 0.5)
        A = self.params.A
        B = self.params.B
        h_bar = mean_forcing(self.params, 0.5)
        self.assertAlmostEqual(law.mean_zeta, h_bar / (A - B))
        self.assertAlmostEqual(law.mean_xi, -0.7347 / A + B / (A - B) * h_bar / A, places=3)
        npt.assert_allclose(law.covariance(), law.covariance().T)
        self.assertGreater(np.linalg.det(law.covariance()), 0.0)

    def test_zeta_limits(self):
        self.assertEqual(frozen.zeta_exact(self.params, self.noise, 0.5, 3.0, 0.0), (3.0, 0.0))
        law = frozen.stationary_law(self.params, self.noise, 0.5)
        mean, var = frozen.zeta_exact(self.params, self.noise, 0.5, 3.0, math.inf)
        self.assertAlmostEqual(mean, law.mean_zeta)
        self.assertAlmostEqual(var, law.var_zeta)

    def test_xi_mean_limits(self):
        """xi starts at X0(x) and relaxes to the stationary mean at any latitude"""
        X0 = {"kind": "affine", "value": 1.0, "slope": -2.0}
        self.assertAlmostEqual(frozen.xi_exact_mean(self.params, self.noise, 0.5, 0.3, X0, 0.0), 0.4)
        law = frozen.stationary_law(self.params, self.noise, 0.5, x=0.3)
        self.assertAlmostEqual(frozen.xi_exact_mean(self.params, self.noise, 0.5, 0.3, X0, math.inf), law.mean_xi)
        self.assertAlmostEqual(frozen.xi_exact_mean(self.params, self.noise, 0.5, 0.3, X0, 500.0), law.mean_xi)

    def test_xi_variance_limit(self):
        law = frozen.stationary_law(self.params, self.noise, 0.5)
        self.assertEqual(frozen.xi_exact_variance(self.params, self.noise, 0.5, 0.5, 0.0), 0.0)
        self.assertAlmostEqual(frozen.xi_exact_variance(self.params, self.noise, 0.5, 0.5, 500.0), law.var_xi)

    def test_transient_law_limit(self):
        law = frozen.stationary_law(self.params, self.noise, 0.5)
        late = frozen.transient_law(self.params, self.noise, 0.5, 0.0, math.inf)
        for k, v in law.to_dict().items():
            self.assertAlmostEqual(getattr(late, k), v, msg=k)

    def test_uncoupled_variance(self):
        """With B = 0 the field at x = eta is a scalar OU process of variance Sigma^2 / (2A)"""
        params = self.params.replace(c=0.0)
        self.assertEqual(params.B, 0.0)
        for eta in (0.2, 0.5, 0.8):
            law = frozen.stationary_law(params, self.noise, eta)
            sigma = sigma_field(eta, eta)
            self.assertAlmostEqual(law.var_xi, sigma ** 2 / (2 * params.A), places=10, msg=eta)

    def test_noise_scaling(self):
        """Scaling the field noise by c scales every second moment by c^2 and leaves the means"""
        law = frozen.stationary_law(self.params, self.noise, 0.5, x=0.3)
        scaled = frozen.stationary_law(self.params, NoiseSpec.from_names(field_scale=3.0), 0.5, x=0.3)
        self.assertAlmostEqual(scaled.mean_xi, law.mean_xi, places=12)
        self.assertAlmostEqual(scaled.mean_zeta, law.mean_zeta, places=12)
        for key in ("var_xi", "var_zeta", "cov_xi_zeta"):
            self.assertAlmostEqual(getattr(scaled, key) / getattr(law, key), 9.0, places=10, msg=key)
        ratio = frozen.xi_exact_variance(
            self.params, NoiseSpec.from_names(field_scale=3.0), 0.5, 0.3, 2.0
        ) / frozen.xi_exact_variance(self.params, self.noise, 0.5, 0.3, 2.0)
        self.assertAlmostEqual(ratio, 9.0, places=10)

    def test_degenerate(self):
        """A = B leaves the frozen system without a stationary law"""
        with self.assertRaises(DegenerateModelError):
            frozen.stationary_law(ModelParams(b=0.0), self.noise, 0.5)

    def test_negative_time(self):
        with self.assertRaises(ValueError):
            frozen.zeta_exact(self.params, self.noise, 0.5, 0.0, -1.0)


class TestSampler(unittest.TestCase):
    params = ModelParams()
    noise = NoiseSpec.standard()

    def test_default_dt(self):
        self.assertAlmostEqual(frozen.default_frozen_dt(self.params) * self.params.A, 0.05)
        self.assertEqual(frozen.default_frozen_dt(self.params, 0.01), 0.01)

    def test_stability(self):
        """dt A >= 0.1 is refused"""
        with self.assertRaises(StabilityError):
            frozen.sample_frozen_ensemble(self.params, self.noise, 0.5, 0.0, 1.0, dt=0.3)
        with self.assertRaises(StabilityError):
            frozen.check_stability(self.params, 0.0)

    def test_noiseless_relaxation(self):
        """Without noise the field relaxes to the stationary means"""
        noise = NoiseSpec.from_names(field="zero")
        grid = LatitudeGrid.uniform(101)
        path = frozen.sample_frozen_path(self.params, noise, 0.5, 0.0, 250.0, grid=grid)
        law = frozen.stationary_law(self.params, noise, 0.5, grid=grid)
        self.assertAlmostEqual(path.zeta[-1], law.mean_zeta, places=6)
        self.assertAlmostEqual(path.xi_at_eta[-1], law.mean_xi, places=6)
        self.assertEqual(path.xi_at_eta[0], 0.0)

    def test_reproducible(self):
        a = frozen.sample_frozen_ensemble(self.params, self.noise, 0.5, 0.0, 5.0, n_paths=3, seed=11)
        b = frozen.sample_frozen_ensemble(self.params, self.noise, 0.5, 0.0, 5.0, n_paths=3, seed=11)
        npt.assert_array_equal(a.xi_at_eta, b.xi_at_eta)
        npt.assert_array_equal(a.zeta, b.zeta)
        c = frozen.sample_frozen_ensemble(self.params, self.noise, 0.5, 0.0, 5.0, n_paths=3, seed=12)
        self.assertFalse(np.array_equal(a.zeta, c.zeta))

    def test_chunking(self):
        """Paths depend on (seed, index) only, not on how the ensemble is split"""
        whole = frozen.sample_frozen_ensemble(self.params, self.noise, 0.3, 0.0, 5.0, n_paths=5, seed=3)
        split = frozen.sample_frozen_ensemble(
            self.params, self.noise, 0.3, 0.0, 5.0, n_paths=5, seed=3, chunk_size=2
        )
        npt.assert_allclose(whole.zeta, split.zeta, rtol=1e-12)
        single = frozen.sample_frozen_path(self.params, self.noise, 0.3, 0.0, 5.0, seed=3, index=4)
        npt.assert_allclose(single.zeta, whole.path(4).zeta, rtol=1e-12)

    def test_record_stride(self):
        ens = frozen.sample_frozen_ensemble(
            self.params, self.noise, 0.5, 0.0, 10.0, dt=0.1, n_paths=2, record_stride=10
        )
        npt.assert_allclose(ens.times, np.arange(0, 10.01, 1.0))
        self.assertEqual(ens.zeta.shape, (2, 11))

    @pytest.mark.slow
    def test_stationary_monte_carlo(self):
        """Long-run ensemble moments agree with the stationary law at eta = 1/2"""
        law = frozen.stationary_law(self.params, self.noise, 0.5, grid=LatitudeGrid.uniform(101))
        ens = frozen.sample_frozen_ensemble(
            self.params, self.noise, 0.5, law.mean_xi, 80.0, n_paths=4000, seed=5, record_stride=100
        )
        xi, zeta = ens.at(80.0)
        self.assertLess(abs(np.mean(zeta) - law.mean_zeta), 3 * math.sqrt(law.var_zeta / 4000))
        self.assertLess(abs(np.mean(xi) - law.mean_xi), 3 * math.sqrt(law.var_xi / 4000))
        self.assertAlmostEqual(np.var(zeta) / law.var_zeta, 1.0, delta=0.1)
        self.assertAlmostEqual(np.var(xi) / law.var_xi, 1.0, delta=0.1)
        self.assertAlmostEqual(np.cov(xi, zeta)[0, 1] / law.cov_xi_zeta, 1.0, delta=0.12)

    @pytest.mark.slow
    def test_zeta_transient_monte_carlo(self):
        """Ensemble mean of zeta at t = 1 matches the closed form within three standard errors"""
        grid = LatitudeGrid.uniform(101)
        ens = frozen.sample_frozen_ensemble(
            self.params, self.noise, 0.5, 0.0, 1.0, dt=0.01, n_paths=20000, seed=2, grid=grid
        )
        mean, var = frozen.zeta_exact(self.params, self.noise, 0.5, 0.0, 1.0, grid=grid)
        _, zeta = ens.at(1.0)
        self.assertLess(abs(np.mean(zeta) - mean), 3 * math.sqrt(var / 20000))
        self.assertAlmostEqual(np.var(zeta) / var, 1.0, delta=0.05)
