#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

"""Constants and coefficient functions of the stochastic Budyko-Sellers model.

The temperature field X(t, x) lives on latitudes x in [0, 1] (0 is the
equator, 1 the pole) and is relaxed towards the global mean Z by the
transport term; the ice line eta in [0, 1] moves with the temperature at
the ice line. Two-argument coefficients always take the latitude first,
h(x, eta) and Sigma(x, eta).
"""

import dataclasses
import json
import logging
import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

logger = logging.getLogger(__name__)

# Optimal constant of the embedding W^{1,2}([0,1]) into C([0,1])
SOBOLEV_CONSTANT = math.tanh(1.0) ** -0.5

PARAM_FIELDS = (
    "R",
    "Q",
    "s2",
    "alpha_w",
    "alpha_s",
    "K_albedo",
    "a",
    "b",
    "c",
    "kappa",
    "K_drift",
    "X_critical",
)


class ModelDomainError(ValueError):
    pass


class ModelParamsError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ModelParams:
    R: float = 12.6
    Q: float = 343.0
    s2: float = -0.482
    alpha_w: float = 0.32
    alpha_s: float = 0.62
    K_albedo: float = 25.0
    a: float = 202.0
    b: float = 1.9
    c: float = 3.04
    kappa: float = 0.1
    K_drift: float = 25.0
    X_critical: float = -10.0

    @property
    def A(self):
        return (self.b + self.c) / self.R

    @property
    def B(self):
        return self.c / self.R

    def violations(self):
        """List the broken parameter invariants (empty when all hold)."""
        out = []
        for name in ("R", "Q", "b", "c", "kappa", "K_albedo", "K_drift"):
            if not getattr(self, name) > 0:
                out.append("{} must be > 0 (got {})".format(name, getattr(self, name)))
        if not 0 < self.alpha_w < self.alpha_s < 1:
            out.append(
                "albedos must satisfy 0 < alpha_w < alpha_s < 1 (got {}, {})".format(
                    self.alpha_w, self.alpha_s
                )
            )
        if self.R > 0 and not self.A > self.B:
            out.append("A = {} must exceed B = {}".format(self.A, self.B))
        return out

    def check(self):
        violations = self.violations()
        if violations:
            raise ModelParamsError("; ".join(violations))
        return self

    def replace(self, **overrides):
        unknown = set(overrides) - set(PARAM_FIELDS)
        if unknown:
            raise ModelParamsError(
                "Unknown parameter(s): {}".format(", ".join(sorted(unknown)))
            )
        return dataclasses.replace(self, **overrides)

    def to_dict(self):
        return {k: getattr(self, k) for k in PARAM_FIELDS}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=4)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(PARAM_FIELDS)
        if unknown:
            raise ModelParamsError(
                "Unknown parameter(s): {}".format(", ".join(sorted(unknown)))
            )
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


@dataclasses.dataclass(frozen=True, eq=False)
class LatitudeGrid:
    """Latitude nodes on [0, 1] with trapezoid weights for the integral over dx."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ModelDomainError("a latitude grid needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or np.any(np.diff(nodes) <= 0):
            raise ModelDomainError("latitude nodes must increase from 0 to 1")
        nodes.setflags(write=False)
        weights = np.asarray(self.weights, dtype=float)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, n):
        return cls.from_nodes(np.linspace(0.0, 1.0, int(n)))

    @classmethod
    def from_nodes(cls, nodes):
        nodes = np.asarray(nodes, dtype=float)
        dx = np.diff(nodes)
        weights = np.zeros_like(nodes)
        weights[:-1] += dx / 2
        weights[1:] += dx / 2
        return cls(nodes, weights)

    def __len__(self):
        return self.nodes.size

    def __repr__(self):
        return "<LatitudeGrid {} nodes>".format(self.nodes.size)

    @property
    def spacing(self):
        return float(np.max(np.diff(self.nodes)))

    def integrate(self, values):
        """Trapezoid integral over the last axis."""
        return np.asarray(values, dtype=float) @ self.weights

    def interpolate(self, values, x):
        """Linear interpolation of values (..., n) at positions x (...,)."""
        values = np.asarray(values, dtype=float)
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.nodes.size - 2)
        x0 = self.nodes[idx]
        w = (x - x0) / (self.nodes[idx + 1] - x0)
        if values.ndim == 1:
            lo = values[idx]
            hi = values[idx + 1]
        else:
            lo = np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]
            hi = np.take_along_axis(values, idx[..., None] + 1, axis=-1)[..., 0]
        return lo + w * (hi - lo)

    def dirichlet(self, values):
        """Integral of the squared slope of the piecewise linear interpolant."""
        dX = np.diff(np.asarray(values, dtype=float), axis=-1)
        return np.sum(dX ** 2 / np.diff(self.nodes), axis=-1)


DEFAULT_QUADRATURE_NODES = 1001


def default_grid(grid=None):
    if grid is None:
        return LatitudeGrid.uniform(DEFAULT_QUADRATURE_NODES)
    return grid


def _check_unit(name, v):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0.0) or np.any(v > 1.0) or np.any(np.isnan(v)):
        raise ModelDomainError("{} must lie in [0, 1] (got {})".format(name, v))
    return v


def _scalar(v):
    if np.ndim(v) == 0:
        return float(v)
    return v


def insolation(params, x):
    x = _check_unit("x", x)
    return _scalar(1.0 + params.s2 / 2.0 * (3.0 * x ** 2 - 1.0))


def albedo(params, x, eta):
    x = _check_unit("x", x)
    eta = _check_unit("eta", eta)
    mid = (params.alpha_s + params.alpha_w) / 2.0
    half = (params.alpha_s - params.alpha_w) / 2.0
    return _scalar(mid + half * np.tanh(params.K_albedo * (x - eta)))


def forcing_h(params, x, eta):
    """h(x, eta) = (Q s(x) (1 - alpha(x, eta)) - a) / R."""
    s = insolation(params, x)
    alpha = albedo(params, x, eta)
    return _scalar((params.Q * s * (1.0 - alpha) - params.a) / params.R)


def drift_F(params, x, eta, X, Z):
    """Field drift -A X + B Z + h(x, eta)."""
    return _scalar(
        -params.A * np.asarray(X, dtype=float)
        + params.B * np.asarray(Z, dtype=float)
        + forcing_h(params, x, eta)
    )


def drift_f(params, eta, X):
    """Ice-line drift, restoring near the boundaries and ~X - X_critical inside."""
    eta = _check_unit("eta", eta)
    X = np.asarray(X, dtype=float)
    K = params.K_drift
    gate = K * (1.0 - np.exp(-K * eta * (1.0 - eta)))
    return _scalar(
        -params.kappa * (eta - 0.5) + gate * np.arctan((X - params.X_critical) / K)
    )


def sigma_eta(eta):
    eta = _check_unit("eta", eta)
    return _scalar(eta * (1.0 - eta))


def sigma_field(eta, x):
    """Sigma(x, eta) = (2 + eta) / (1 + x^2)."""
    eta = _check_unit("eta", eta)
    x = _check_unit("x", x)
    return _scalar((2.0 + eta) / (1.0 + x ** 2))


def truncate01(eta):
    return _scalar(np.clip(np.asarray(eta, dtype=float), 0.0, 1.0))


def mean_forcing(params, eta, grid=None):
    """h_bar(eta), the latitude mean of h(., eta)."""
    grid = default_grid(grid)
    eta = np.asarray(eta, dtype=float)
    h = forcing_h(params, grid.nodes, eta[..., None])
    return _scalar(grid.integrate(h))


class StandardFieldAmplitude:
    name = "standard"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def __call__(self, x, eta):
        return self.scale * np.asarray(sigma_field(eta, x), dtype=float)

    def describe(self):
        return {"field": self.name, "field_scale": self.scale}

    def __repr__(self):
        return "<StandardFieldAmplitude scale={}>".format(self.scale)


class ConstantFieldAmplitude:
    name = "constant"

    def __init__(self, value=1.0):
        self.value = float(value)

    def __call__(self, x, eta):
        x = _check_unit("x", x)
        eta = _check_unit("eta", eta)
        return np.full(np.broadcast(x, eta).shape, self.value)

    def describe(self):
        return {"field": self.name, "field_scale": self.value}

    def __repr__(self):
        return "<ConstantFieldAmplitude {}>".format(self.value)


class TabulatedFieldAmplitude:
    """Sigma(x, eta) from a user table, bilinear between the table nodes."""

    name = "tabulated"

    def __init__(self, x_nodes, eta_nodes, table):
        self.x_nodes = np.asarray(x_nodes, dtype=float)
        self.eta_nodes = np.asarray(eta_nodes, dtype=float)
        self.table = np.asarray(table, dtype=float)
        if self.table.shape != (self.x_nodes.size, self.eta_nodes.size):
            raise ModelDomainError(
                "table shape {} does not match nodes ({}, {})".format(
                    self.table.shape, self.x_nodes.size, self.eta_nodes.size
                )
            )
        self._interp = RegularGridInterpolator((self.x_nodes, self.eta_nodes), self.table)

    def __call__(self, x, eta):
        x = _check_unit("x", x)
        eta = _check_unit("eta", eta)
        x, eta = np.broadcast_arrays(x, eta)
        points = np.stack([x.ravel(), eta.ravel()], axis=-1)
        return self._interp(points).reshape(x.shape)

    def describe(self):
        return {
            "field": self.name,
            "x_nodes": self.x_nodes.tolist(),
            "eta_nodes": self.eta_nodes.tolist(),
            "table": self.table.tolist(),
        }

    def __repr__(self):
        return "<TabulatedFieldAmplitude {}x{}>".format(*self.table.shape)


class StandardIcelineAmplitude:
    name = "standard"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def __call__(self, eta, X=None, Z=None):
        return self.scale * np.asarray(sigma_eta(eta), dtype=float)

    def describe(self):
        return {"iceline": self.name, "iceline_scale": self.scale}

    def __repr__(self):
        return "<StandardIcelineAmplitude scale={}>".format(self.scale)


class ConstantIcelineAmplitude:
    name = "constant"

    def __init__(self, value=1.0):
        self.value = float(value)

    def __call__(self, eta, X=None, Z=None):
        eta = _check_unit("eta", eta)
        return np.full(np.shape(eta), self.value)

    def describe(self):
        return {"iceline": self.name, "iceline_scale": self.value}

    def __repr__(self):
        return "<ConstantIcelineAmplitude {}>".format(self.value)


FIELD_AMPLITUDES = {
    "standard": StandardFieldAmplitude,
    "constant": ConstantFieldAmplitude,
    "zero": lambda scale=0.0: ConstantFieldAmplitude(0.0),
}

ICELINE_AMPLITUDES = {
    "standard": StandardIcelineAmplitude,
    "constant": ConstantIcelineAmplitude,
    "zero": lambda scale=0.0: ConstantIcelineAmplitude(0.0),
}


@dataclasses.dataclass(frozen=True)
class NoiseSpec:
    """Noise amplitudes of the field (one entry per Brownian motion) and of the ice line.

    iceline_amplitude is called as sigma(eta, X, Z); it only looks at the
    fast variables when iceline_state_dependent is set.
    """

    field_amplitudes: tuple = (StandardFieldAmplitude(),)
    iceline_amplitude: object = StandardIcelineAmplitude()
    iceline_state_dependent: bool = False

    @classmethod
    def standard(cls):
        return cls()

    @classmethod
    def from_names(cls, field="standard", field_scale=1.0, iceline="standard", iceline_scale=1.0):
        if field not in FIELD_AMPLITUDES:
            raise ModelDomainError("Unknown field noise {}".format(field))
        if iceline not in ICELINE_AMPLITUDES:
            raise ModelDomainError("Unknown ice-line noise {}".format(iceline))
        return cls(
            field_amplitudes=(FIELD_AMPLITUDES[field](field_scale),),
            iceline_amplitude=ICELINE_AMPLITUDES[iceline](iceline_scale),
        )

    @property
    def n_field(self):
        return len(self.field_amplitudes)

    def field(self, x, eta):
        """Sigma^j(x, eta) stacked along a leading axis of length n_field."""
        return np.stack([np.asarray(amp(x, eta), dtype=float) for amp in self.field_amplitudes])

    def iceline(self, eta, X=None, Z=None):
        return self.iceline_amplitude(eta, X, Z)

    def mean_field(self, eta, grid=None):
        """Sigma_bar^j(eta), one latitude mean per field noise."""
        grid = default_grid(grid)
        eta = np.asarray(eta, dtype=float)
        return grid.integrate(self.field(grid.nodes, eta[..., None]))

    def describe(self):
        out = {}
        if self.n_field == 1:
            out.update(self.field_amplitudes[0].describe())
        else:
            out["fields"] = [amp.describe() for amp in self.field_amplitudes]
        if hasattr(self.iceline_amplitude, "describe"):
            out.update(self.iceline_amplitude.describe())
        return out


def mean_field_amplitude(noise, eta, grid=None):
    return noise.mean_field(eta, grid)


class AssumptionCheck:
    def __init__(self, name, passed, margin, detail):
        self.name = name
        self.passed = bool(passed)
        self.margin = float(margin)
        self.detail = detail

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "margin": self.margin,
            "detail": self.detail,
        }

    def __repr__(self):
        return "<AssumptionCheck {} {} ({})>".format(
            self.name, "pass" if self.passed else "FAIL", self.margin
        )


class ValidationReport:
    def __init__(self, checks):
        self.checks = list(checks)

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def __getitem__(self, name):
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": [check.to_dict() for check in self.checks],
        }


def validate_assumptions(
    params,
    noise,
    kappa_prime=None,
    mu_sup=1.0,
    n_h_grid=201,
    X_grid=None,
):
    """Check the structural assumptions A4-A7 for the model.

    Failures are report entries, never exceptions.
    """
    if X_grid is None:
        X_grid = np.linspace(-100.0, 100.0, 401)
    checks = []

    violations = params.violations()
    checks.append(
        AssumptionCheck(
            "params",
            not violations,
            0.0 if violations else 1.0,
            "; ".join(violations) or "all parameter invariants hold",
        )
    )

    f0 = drift_f(params, 0.0, X_grid)
    f1 = drift_f(params, 1.0, X_grid)
    zeros = np.zeros_like(X_grid)
    s0 = np.abs(np.asarray(noise.iceline(np.zeros_like(X_grid), X_grid, zeros), dtype=float))
    s1 = np.abs(np.asarray(noise.iceline(np.ones_like(X_grid), X_grid, zeros), dtype=float))
    f_margin = min(float(np.min(f0)), float(-np.max(f1)))
    s_max = max(float(np.max(s0)), float(np.max(s1)))
    checks.append(
        AssumptionCheck(
            "A4",
            f_margin >= 0.0 and s_max == 0.0,
            f_margin if s_max == 0.0 else -s_max,
            "min f(0,X) = {:.6g}, max f(1,X) = {:.6g}, max |sigma| at boundaries = {:.6g}".format(
                float(np.min(f0)), float(np.max(f1)), s_max
            ),
        )
    )

    xs = np.linspace(0.0, 1.0, n_h_grid)
    xx, ee = np.meshgrid(xs, xs, indexing="ij")
    sigma_sup = float(np.max(np.sqrt(np.sum(noise.field(xx, ee) ** 2, axis=0))))
    checks.append(
        AssumptionCheck(
            "A5",
            math.isfinite(sigma_sup),
            sigma_sup,
            "sup ||Sigma||_l2 on a {0}x{0} grid = {1:.6g}".format(n_h_grid, sigma_sup),
        )
    )

    # Field amplitudes do not depend on X, so Sigma_X vanishes and A6 reads F_X = -A < 0
    checks.append(
        AssumptionCheck(
            "A6",
            params.A > 0,
            params.A,
            "F_X + 3/2 ||Sigma_X||^2 = {:.6g}".format(-params.A),
        )
    )

    if kappa_prime is None:
        kappa_prime = params.b / (2.0 * params.R)
    a7_margin = params.A - params.B / 2.0 * (1.0 + mu_sup ** 2)
    h_sup = float(np.max(np.abs(forcing_h(params, xx, ee))))
    if 0.0 < kappa_prime < params.b / params.R:
        C = h_sup ** 2 / (4.0 * kappa_prime)
        X = X_grid[:, None]
        Z = X_grid[None, :]
        lhs_max = X * (-params.A * X + params.B * Z) + np.abs(X) * h_sup
        rhs = -(params.A - kappa_prime) * X ** 2 + params.B * X * Z + C
        bound_ok = bool(np.all(lhs_max <= rhs + 1e-9 * (1.0 + np.abs(rhs))))
        detail = "A - B/2 (1 + C_mu^2) = {:.6g}, kappa' = {:.6g}, ||h|| = {:.6g}, C = {:.6g}".format(
            a7_margin, kappa_prime, h_sup, C
        )
    else:
        bound_ok = False
        detail = "A - B/2 (1 + C_mu^2) = {:.6g}, kappa' = {:.6g} outside (0, b/R)".format(
            a7_margin, kappa_prime
        )
    checks.append(AssumptionCheck("A7", a7_margin > 0 and bound_ok, a7_margin, detail))

    report = ValidationReport(checks)
    logger.debug(
        "Assumption validation: {}".format(
            ", ".join("{}={}".format(c.name, c.passed) for c in report.checks)
        )
    )
    return report


class InitialField:
    """Initial temperature profile X0(x): constant, affine or tabulated."""

    def __init__(self, kind="constant", value=0.0, slope=0.0, nodes=None, values=None):
        if kind not in ("constant", "affine", "tabulated"):
            raise ModelDomainError("Unknown initial field kind {}".format(kind))
        self.kind = kind
        self.value = float(value)
        self.slope = float(slope) if kind == "affine" else 0.0
        self.nodes = None
        self.values = None
        if kind == "tabulated":
            if nodes is None or values is None:
                raise ModelDomainError("a tabulated initial field needs nodes and values")
            self.nodes = np.asarray(nodes, dtype=float)
            self.values = np.asarray(values, dtype=float)
            if self.nodes.shape != self.values.shape:
                raise ModelDomainError("initial field nodes and values differ in length")

    @classmethod
    def coerce(cls, v):
        if isinstance(v, cls):
            return v
        if isinstance(v, dict):
            return cls(**v)
        return cls("constant", value=float(v))

    def __call__(self, x):
        x = _check_unit("x", x)
        if self.kind == "tabulated":
            return _scalar(np.interp(x, self.nodes, self.values))
        return _scalar(self.value + self.slope * x)

    def on(self, grid):
        return np.asarray(self(grid.nodes), dtype=float)

    def mean(self, grid=None):
        grid = default_grid(grid)
        return float(grid.integrate(self.on(grid)))

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "tabulated":
            out["nodes"] = self.nodes.tolist()
            out["values"] = self.values.tolist()
        else:
            out["value"] = self.value
            if self.kind == "affine":
                out["slope"] = self.slope
        return out

    def __eq__(self, other):
        if not isinstance(other, InitialField):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return "<InitialField {}>".format(self.to_dict())
