import math
import unittest

import numpy as np
import numpy.testing as npt

from iceline import model
from iceline.model import (
    InitialField,
    LatitudeGrid,
    ModelDomainError,
    ModelParams,
    ModelParamsError,
    NoiseSpec,
)


class TestModelParams(unittest.TestCase):
    def test_defaults(self):
        """Default parameters are the published constants"""
        params = ModelParams()
        self.assertEqual(params.R, 12.6)
        self.assertEqual(params.Q, 343.0)
        self.assertEqual((params.a, params.b, params.c), (202.0, 1.9, 3.04))
        self.assertAlmostEqual(params.A, 4.94 / 12.6)
        self.assertAlmostEqual(params.B, 3.04 / 12.6)
        self.assertEqual(params.violations(), [])

    def test_replace(self):
        params = ModelParams().replace(Q=327.0)
        self.assertEqual(params.Q, 327.0)
        self.assertEqual(params.R, 12.6)

    def test_replace_unknown(self):
        """Unknown parameter names are refused"""
        with self.assertRaises(ModelParamsError):
            ModelParams().replace(solar=1.0)

    def test_json(self):
        params = ModelParams(Q=350.0, kappa=0.2)
        self.assertEqual(ModelParams.from_json(params.to_json()), params)

    def test_check(self):
        """Invariant violations raise ModelParamsError"""
        with self.assertRaises(ModelParamsError):
            ModelParams(alpha_w=0.7).check()
        with self.assertRaises(ModelParamsError):
            ModelParams(b=0.0).check()
        self.assertEqual(ModelParams().check(), ModelParams())


class TestCoefficients(unittest.TestCase):
    params = ModelParams()

    def test_insolation(self):
        self.assertAlmostEqual(model.insolation(self.params, 0.0), 1.241)
        self.assertAlmostEqual(model.insolation(self.params, 1.0), 0.518)
        flat = self.params.replace(s2=0.0)
        npt.assert_allclose(model.insolation(flat, np.linspace(0, 1, 7)), 1.0)

    def test_insolation_domain(self):
        with self.assertRaises(ModelDomainError):
            model.insolation(self.params, 1.5)

    def test_albedo(self):
        self.assertAlmostEqual(model.albedo(self.params, 0.3, 0.3), 0.47)
        self.assertAlmostEqual(model.albedo(self.params, 1.0, 0.0), 0.62)
        self.assertAlmostEqual(model.albedo(self.params, 0.0, 1.0), 0.32)

    def test_forcing(self):
        self.assertAlmostEqual(model.forcing_h(self.params, 0.5, 0.5), -0.7347, places=4)
        dark = self.params.replace(Q=0.0)
        self.assertAlmostEqual(model.forcing_h(dark, 0.5, 0.5), -202.0 / 12.6)

    def test_mean_forcing_constant_albedo(self):
        """With a constant albedo the insolation integrates to one"""
        params = self.params.replace(alpha_w=0.3, alpha_s=0.3)
        expected = (params.Q * 0.7 - params.a) / params.R
        self.assertAlmostEqual(model.mean_forcing(params, 0.4), expected, places=5)

    def test_drift_F(self):
        x = np.linspace(0, 1, 5)
        h = model.forcing_h(self.params, x, 0.4)
        npt.assert_allclose(model.drift_F(self.params, x, 0.4, 0.0, 0.0), h)
        npt.assert_allclose(
            model.drift_F(self.params, x, 0.4, 3.0, 3.0), -(1.9 / 12.6) * 3.0 + h
        )

    def test_drift_f_boundaries(self):
        """The ice-line drift at the poles is kappa/2 whatever X"""
        X = np.linspace(-80, 80, 9)
        npt.assert_allclose(model.drift_f(self.params, 0.0, X), 0.05)
        npt.assert_allclose(model.drift_f(self.params, 1.0, X), -0.05)
        self.assertEqual(model.drift_f(self.params, 0.5, self.params.X_critical), 0.0)

    def test_sigma(self):
        self.assertEqual(model.sigma_eta(0.0), 0.0)
        self.assertEqual(model.sigma_eta(1.0), 0.0)
        self.assertEqual(model.sigma_eta(0.5), 0.25)
        self.assertEqual(model.sigma_field(0.0, 0.0), 2.0)
        self.assertEqual(model.sigma_field(1.0, 1.0), 1.5)

    def test_truncate(self):
        self.assertEqual(model.truncate01(1.5), 1.0)
        self.assertEqual(model.truncate01(0.3), 0.3)
        self.assertEqual(model.truncate01(-0.2), 0.0)


class TestLatitudeGrid(unittest.TestCase):
    grid = LatitudeGrid.uniform(101)

    def test_integrate(self):
        self.assertAlmostEqual(self.grid.integrate(np.ones(101)), 1.0)
        self.assertAlmostEqual(self.grid.integrate(self.grid.nodes), 0.5)

    def test_integrate_rows(self):
        values = np.stack([np.full(101, 2.0), self.grid.nodes])
        npt.assert_allclose(self.grid.integrate(values), [2.0, 0.5])

    def test_interpolate(self):
        values = 3.0 * self.grid.nodes
        npt.assert_allclose(self.grid.interpolate(values, [0.0, 0.123, 1.0]), [0.0, 0.369, 3.0])
        stacked = np.stack([values, -values])
        npt.assert_allclose(self.grid.interpolate(stacked, np.array([0.5, 0.25])), [1.5, -0.75])

    def test_dirichlet(self):
        self.assertAlmostEqual(self.grid.dirichlet(self.grid.nodes), 1.0)
        self.assertEqual(self.grid.dirichlet(np.full(101, 4.0)), 0.0)

    def test_bad_nodes(self):
        with self.assertRaises(ModelDomainError):
            LatitudeGrid.from_nodes([0.0])
        with self.assertRaises(ModelDomainError):
            LatitudeGrid.from_nodes([0.0, 0.6, 0.5, 1.0])


class TestNoiseSpec(unittest.TestCase):
    def test_mean_field(self):
        """Sigma_bar(eta) = (2 + eta) pi / 4"""
        noise = NoiseSpec.standard()
        npt.assert_allclose(noise.mean_field(0.0), [math.pi / 2], atol=1e-6)
        npt.assert_allclose(model.mean_field_amplitude(noise, 1.0), [3 * math.pi / 4], atol=1e-6)

    def test_from_names(self):
        noise = NoiseSpec.from_names(field="constant", field_scale=2.0, iceline="zero")
        npt.assert_allclose(noise.field(np.linspace(0, 1, 3), 0.5), [[2.0, 2.0, 2.0]])
        self.assertEqual(float(noise.iceline(0.5)), 0.0)
        with self.assertRaises(ModelDomainError):
            NoiseSpec.from_names(field="pink")

    def test_several_field_noises(self):
        noise = NoiseSpec(
            field_amplitudes=(model.ConstantFieldAmplitude(1.0), model.StandardFieldAmplitude(0.5))
        )
        self.assertEqual(noise.n_field, 2)
        self.assertEqual(noise.field(np.linspace(0, 1, 4), 0.2).shape, (2, 4))
        npt.assert_allclose(noise.mean_field(0.0), [1.0, math.pi / 4], atol=1e-6)

    def test_tabulated(self):
        """Tabulated amplitudes interpolate bilinearly"""
        amp = model.TabulatedFieldAmplitude([0.0, 1.0], [0.0, 1.0], [[1.0, 2.0], [3.0, 4.0]])
        self.assertAlmostEqual(float(amp(0.5, 0.5)), 2.5)
        self.assertAlmostEqual(float(amp(1.0, 0.0)), 3.0)
        with self.assertRaises(ModelDomainError):
            model.TabulatedFieldAmplitude([0.0, 1.0], [0.0, 1.0], [[1.0, 2.0]])


class TestValidation(unittest.TestCase):
    def test_published_constants(self):
        """The published model satisfies every assumption"""
        report = model.validate_assumptions(ModelParams(), NoiseSpec.standard())
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report["A7"].margin, 1.9 / 12.6)
        self.assertAlmostEqual(report["A4"].margin, 0.05)
        self.assertAlmostEqual(report["A6"].margin, 4.94 / 12.6)

    def test_no_radiative_damping(self):
        """b = 0 makes A = B and A7 fails"""
        report = model.validate_assumptions(ModelParams(b=0.0), NoiseSpec.standard())
        self.assertFalse(report.passed)
        self.assertFalse(report["A7"].passed)
        self.assertFalse(report["params"].passed)

    def test_boundary_noise(self):
        """A constant ice-line noise does not vanish at the poles"""
        noise = NoiseSpec.from_names(iceline="constant", iceline_scale=1.0)
        report = model.validate_assumptions(ModelParams(), noise)
        self.assertFalse(report["A4"].passed)
        self.assertTrue(report["A7"].passed)

    def test_report_dict(self):
        d = model.validate_assumptions(ModelParams(), NoiseSpec.standard()).to_dict()
        self.assertEqual([c["name"] for c in d["checks"]], ["params", "A4", "A5", "A6", "A7"])


class TestInitialField(unittest.TestCase):
    def test_coerce(self):
        self.assertEqual(InitialField.coerce(2.5), InitialField("constant", 2.5))
        self.assertEqual(
            InitialField.coerce({"kind": "affine", "value": 1.0, "slope": 2.0}),
            InitialField("affine", 1.0, 2.0),
        )

    def test_mean(self):
        self.assertAlmostEqual(InitialField("affine", 1.0, 2.0).mean(), 2.0)

    def test_tabulated(self):
        field = InitialField("tabulated", nodes=[0.0, 1.0], values=[0.0, -4.0])
        self.assertAlmostEqual(field(0.25), -1.0)
        self.assertEqual(InitialField.coerce(field.to_dict()), field)

    def test_bad_kind(self):
        with self.assertRaises(ModelDomainError):
            InitialField("spline")
