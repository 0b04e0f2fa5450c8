import math
import unittest

import numpy as np
import pytest

from iceline import averaging, experiments, simulator
from iceline.averaging import AveragedModel
from iceline.model import SOBOLEV_CONSTANT, LatitudeGrid, ModelParams, NoiseSpec
from iceline.simulator import RunConfig


class TestSobolevNorm(unittest.TestCase):
    grid = LatitudeGrid.uniform(101)

    def test_constant(self):
        self.assertAlmostEqual(experiments.sobolev_norm_sq(np.full(101, 3.0), self.grid), 9.0)

    def test_linear(self):
        """||x||^2 = 1/3 + 1"""
        self.assertAlmostEqual(experiments.sobolev_norm_sq(self.grid.nodes, self.grid), 4.0 / 3.0, places=4)

    def test_constant_value(self):
        self.assertAlmostEqual(SOBOLEV_CONSTANT, 1.1459, places=4)


class TestSobolevDiagnostic(unittest.TestCase):
    params = ModelParams()
    noise = NoiseSpec.standard()

    def test_bound(self):
        cfg = RunConfig(epsilon=0.1, T=0.5, n_lat=21, n_paths=3, seed=2)
        ensemble = simulator.run_slowfast_ensemble(cfg, self.params, self.noise, snapshot_stride=5)
        report = experiments.sobolev_diagnostic(ensemble)
        self.assertTrue(report.bound_holds)
        self.assertLessEqual(report.worst_ratio, 1.0)
        self.assertEqual(report.mean_norm_sq.size, len(ensemble.snapshot_times))
        self.assertTrue(np.all(np.diff(report.running_max) >= 0))
        self.assertEqual(report.to_dict()["sobolev_constant"], SOBOLEV_CONSTANT)

    def test_single_path(self):
        cfg = RunConfig(epsilon=0.1, T=0.5, n_lat=21, seed=2)
        path = simulator.run_slowfast(cfg, self.params, self.noise, snapshot_stride=5)
        report = experiments.sobolev_diagnostic(path)
        self.assertTrue(report.bound_holds)

    def test_coarse_grid(self):
        """Fewer than 11 latitudes still runs, with a warning"""
        cfg = RunConfig(epsilon=0.1, T=0.5, n_lat=5, seed=2)
        path = simulator.run_slowfast(cfg, self.params, self.noise, snapshot_stride=5)
        with self.assertWarns(RuntimeWarning):
            experiments.sobolev_diagnostic(path)


class TestConvergence(unittest.TestCase):
    def test_field_independent_drift(self):
        """When f ignores the field the slow-fast and averaged paths coincide"""
        params = ModelParams().replace(X_critical=-1e9, K_drift=1.0)
        noise = NoiseSpec.from_names(field="zero")
        model = averaging.tabulate(params, noise, n_grid=51)
        model.exact = True
        cfg = RunConfig(T=0.1, n_lat=11, n_paths=4, seed=3)
        report = experiments.convergence_experiment(cfg, params, noise, epsilons=[0.1, 0.05], model=model)
        self.assertEqual(report.epsilons, [0.1, 0.05])
        for error in report.sup_errors:
            self.assertLess(error, 1e-9)
        self.assertEqual(report.exceed_probs, [0.0, 0.0])
        self.assertEqual(report.aborted, [0, 0])
        self.assertTrue(report.exceed_nonincreasing)
        self.assertTrue(report.passed)
        self.assertTrue(report.to_dict()["passed"])

    def test_flat_errors_fail(self):
        """A ladder whose sup errors do not fall is reported as failed"""
        report = experiments.ConvergenceReport(
            [0.1, 0.03, 0.01], [0.2, 0.2, 0.21], [0.01, 0.01, 0.01], [0.3, 0.3, 0.3], [0.03, 0.03, 0.03],
            0.1, 200, 0, [0, 0, 0]
        )
        self.assertFalse(report.strictly_decreasing)
        self.assertTrue(report.exceed_nonincreasing)
        self.assertFalse(report.passed)
        falling = experiments.ConvergenceReport(
            [0.1, 0.03, 0.01], [0.2, 0.1, 0.05], [0.01, 0.01, 0.01], [0.3, 0.1, 0.0], [0.03, 0.02, 0.0],
            0.1, 200, 0, [0, 0, 0]
        )
        self.assertTrue(falling.passed)

    @pytest.mark.slow
    def test_default_ladder_converges(self):
        """Sup errors fall strictly along the default ladder at the published constants"""
        cfg = RunConfig(T=1.0, n_lat=51, n_paths=200, seed=12)
        report = experiments.convergence_experiment(cfg)
        self.assertEqual(report.epsilons, list(experiments.CONVERGENCE_EPSILONS))
        self.assertEqual(report.aborted, [0, 0, 0])
        self.assertTrue(report.strictly_decreasing, report.sup_errors)
        self.assertTrue(report.exceed_nonincreasing, report.exceed_probs)
        self.assertTrue(report.passed)

    def test_ladder(self):
        with self.assertRaises(ValueError):
            experiments.convergence_experiment(RunConfig(), epsilons=[0.01, 0.1])
        with self.assertRaises(ValueError):
            experiments.convergence_experiment(RunConfig(), epsilons=[0.1, 0.1])


class TestWeakRefinement(unittest.TestCase):
    def test_deterministic_refinement(self):
        """Without noise the level differences halve with dt"""
        model = AveragedModel.from_functions(lambda e: -(e - 0.5), lambda e: 0.0)
        cfg = RunConfig(T=1.0, eta0=0.2, n_paths=4, seed=1)
        report = experiments.weak_refinement(cfg, model, dt=0.1, levels=3)
        self.assertEqual(report.dts, [0.1, 0.05, 0.025])
        self.assertTrue(report.decreasing)
        self.assertAlmostEqual(report.means[0], 0.5 - 0.3 * 0.9 ** 10)
        for ratio in report.ratios:
            self.assertAlmostEqual(ratio, 2.0, delta=0.2)


class TestErgodicAverage(unittest.TestCase):
    params = ModelParams()
    noise = NoiseSpec.standard()

    def test_equator(self):
        """At eta = 0 the drift is kappa / 2 whatever the field"""
        report = experiments.ergodic_average_experiment(
            self.params, self.noise, 0.0, horizons=[10.0, 5.0], n_paths=4, n_lat=21, seed=1
        )
        self.assertEqual(report.horizons, [5.0, 10.0])
        self.assertAlmostEqual(report.f_hat, 0.05, places=12)
        for error in report.errors:
            self.assertLess(error, 1e-12)

    @pytest.mark.slow
    def test_error_decays(self):
        """The time-average error falls roughly like T^-1/2"""
        report = experiments.ergodic_average_experiment(
            self.params, self.noise, 0.5, horizons=[25.0, 50.0, 100.0, 200.0], n_paths=200, n_lat=51, seed=4
        )
        gap = report.errors[0] - report.errors[-1]
        self.assertGreater(gap, 2 * math.hypot(report.stderrs[0], report.stderrs[-1]))
        self.assertLessEqual(report.exponent, -0.4)
        self.assertGreaterEqual(report.exponent, -1.3)

    def test_single_path(self):
        with self.assertRaises(ValueError):
            experiments.ergodic_average_experiment(self.params, self.noise, 0.5, n_paths=1)


class TestConfinement(unittest.TestCase):
    def test_summary(self):
        cfg = RunConfig(epsilon=0.1, T=0.5, n_lat=21, n_paths=3, seed=6)
        params = ModelParams()
        summary = experiments.confinement_experiment(cfg, params)
        self.assertEqual(summary["n_paths"], 3)
        self.assertEqual(summary["epsilon"], 0.1)
        self.assertAlmostEqual(summary["noise_scale"], 0.25 * math.sqrt(cfg.step_size(params)))
        self.assertLessEqual(summary["eta_max"], 1.0)
        self.assertGreaterEqual(summary["eta_min"], 0.0)
        self.assertEqual(summary["confined"], summary["truncation_events"] == 0)

    @pytest.mark.slow
    def test_thousand_paths(self):
        """No truncation over 10^3 paths at eps = 0.01 up to T = 5"""
        cfg = RunConfig(epsilon=0.01, T=5.0, n_lat=51, n_paths=1000, seed=7, record_stride=100)
        summary = experiments.confinement_experiment(cfg, ModelParams())
        self.assertEqual(summary["n_paths"], 1000)
        self.assertEqual(summary["truncation_events"], 0)
        self.assertEqual(summary["aborted"], 0)
        self.assertTrue(summary["confined"])
