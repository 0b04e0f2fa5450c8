#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

"""The frozen fast subsystem: the temperature field with the ice line held fixed.

With eta frozen, (xi(t, x), zeta(t)) is a linear Gaussian system driven by
the field Brownian motions: zeta is an Ornstein-Uhlenbeck process with rate
A - B, and xi relaxes with rate A towards h(x, eta)/A + B zeta/A. Means,
variances and the stationary law are available in closed form; the
Euler-Maruyama sampler here is the oracle the closed forms are checked
against (and vice versa).
"""

import dataclasses
import logging

import numpy as np

from iceline import utils
from iceline.model import (
    InitialField,
    LatitudeGrid,
    default_grid,
    forcing_h,
    mean_forcing,
)

logger = logging.getLogger(__name__)

STABILITY_MARGIN = 0.1
DEFAULT_FROZEN_LATITUDES = 101


class DegenerateModelError(RuntimeError):
    pass


class StabilityError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class GaussianStationary:
    """Moments of the bivariate Gaussian law of (xi(., x), zeta)."""

    mean_xi: float
    mean_zeta: float
    var_xi: float
    var_zeta: float
    cov_xi_zeta: float

    @property
    def is_degenerate(self):
        return not self.var_xi > 0

    @property
    def std_xi(self):
        return float(np.sqrt(max(self.var_xi, 0.0)))

    def mean(self):
        return np.array([self.mean_xi, self.mean_zeta])

    def covariance(self):
        return np.array(
            [[self.var_xi, self.cov_xi_zeta], [self.cov_xi_zeta, self.var_zeta]]
        )

    def to_dict(self):
        return dataclasses.asdict(self)


def check_nondegenerate(params):
    if not params.A > params.B:
        raise DegenerateModelError(
            "A = {:.6g} must exceed B = {:.6g} for the frozen system to be ergodic".format(
                params.A, params.B
            )
        )


def _coefficients(params, noise, eta, x, grid):
    """(h(x, eta), h_bar(eta), Sigma^j(x, eta), Sigma_bar^j(eta)) with the noise axis first."""
    grid = default_grid(grid)
    h = forcing_h(params, x, eta)
    h_bar = mean_forcing(params, eta, grid)
    s = np.atleast_1d(noise.field(x, eta)).astype(float)
    s_bar = np.atleast_1d(noise.mean_field(eta, grid)).astype(float)
    return h, h_bar, s, s_bar


def _decay(rate, t):
    """(1 - exp(-rate t)) / rate, with the t -> infinity limit 1/rate."""
    if np.isinf(t):
        return 1.0 / rate
    return -np.expm1(-rate * t) / rate


def transient_law(params, noise, eta, X0, t, x=None, grid=None):
    """Gaussian law of (xi(t, x), zeta(t)) started from the field X0.

    x defaults to the ice line itself. t may be numpy.inf, which gives the
    stationary law.
    """
    check_nondegenerate(params)
    if x is None:
        x = eta
    grid = default_grid(grid)
    X0 = InitialField.coerce(X0)
    A = params.A
    B = params.B
    AB = A - B
    h, h_bar, s, s_bar = _coefficients(params, noise, eta, x, grid)
    d = s - s_bar

    mean_xi = xi_exact_mean(params, noise, eta, x, X0, t, grid)
    mean_zeta, var_zeta = zeta_exact(params, noise, eta, X0.mean(grid), t, grid)
    var_xi = xi_exact_variance(params, noise, eta, x, t, grid)
    cov = float(np.sum(d * s_bar)) * _decay(2 * A - B, t) + float(np.sum(s_bar ** 2)) * _decay(
        2 * AB, t
    )
    return GaussianStationary(
        mean_xi=float(mean_xi),
        mean_zeta=float(mean_zeta),
        var_xi=float(var_xi),
        var_zeta=float(var_zeta),
        cov_xi_zeta=float(cov),
    )


def stationary_law(params, noise, eta, x=None, grid=None):
    """Stationary law rho^eta of (xi(., x), zeta), x defaulting to eta."""
    check_nondegenerate(params)
    if x is None:
        x = eta
    grid = default_grid(grid)
    A = params.A
    B = params.B
    AB = A - B
    h, h_bar, s, s_bar = _coefficients(params, noise, eta, x, grid)
    d = s - s_bar
    var_zeta = float(np.sum(s_bar ** 2)) / (2 * AB)
    return GaussianStationary(
        mean_xi=float(h / A + B / AB * h_bar / A),
        mean_zeta=float(h_bar / AB),
        var_xi=float(
            np.sum(d ** 2) / (2 * A) + 2 * np.sum(d * s_bar) / (2 * A - B) + var_zeta
        ),
        var_zeta=var_zeta,
        cov_xi_zeta=float(np.sum(d * s_bar) / (2 * A - B) + var_zeta),
    )


def zeta_exact(params, noise, eta, X0_mean, t, grid=None):
    """Mean and variance of the Ornstein-Uhlenbeck process zeta(t)."""
    check_nondegenerate(params)
    if t < 0:
        raise ValueError("t must be >= 0 (got {})".format(t))
    grid = default_grid(grid)
    AB = params.A - params.B
    h_bar = mean_forcing(params, eta, grid)
    s_bar = np.atleast_1d(noise.mean_field(eta, grid))
    if np.isinf(t):
        relax = 0.0
    else:
        relax = np.exp(-AB * t)
    mean = X0_mean * relax + h_bar * _decay(AB, t)
    variance = float(np.sum(s_bar ** 2)) * _decay(2 * AB, t)
    return float(mean), float(variance)


def xi_exact_mean(params, noise, eta, x, X0, t, grid=None):
    """Deterministic part of the explicit solution xi(t, x)."""
    check_nondegenerate(params)
    if t < 0:
        raise ValueError("t must be >= 0 (got {})".format(t))
    grid = default_grid(grid)
    X0 = InitialField.coerce(X0)
    A = params.A
    B = params.B
    AB = A - B
    h = forcing_h(params, x, eta)
    h_bar = mean_forcing(params, eta, grid)
    X0_mean = X0.mean(grid)
    if np.isinf(t):
        return h / A + B / AB * h_bar / A
    eA = np.exp(-A * t)
    # e^{-At}(1 - e^{Bt}) written as e^{-At} - e^{-(A-B)t}
    coupling = eA - np.exp(-AB * t)
    return (
        X0(x) * eA
        + h * _decay(A, t)
        - (X0_mean - h_bar / AB) * coupling
        + B / AB * h_bar * _decay(A, t)
    )


def xi_exact_variance(params, noise, eta, x, t, grid=None):
    """Variance of xi(t, x) from a deterministic initial field."""
    check_nondegenerate(params)
    grid = default_grid(grid)
    A = params.A
    B = params.B
    AB = A - B
    h, h_bar, s, s_bar = _coefficients(params, noise, eta, x, grid)
    d = s - s_bar
    return float(
        np.sum(d ** 2) * _decay(2 * A, t)
        + 2 * np.sum(d * s_bar) * _decay(2 * A - B, t)
        + np.sum(s_bar ** 2) * _decay(2 * AB, t)
    )


def default_frozen_dt(params, dt=None):
    """An explicitly requested dt is kept (and later checked), otherwise half the stability limit."""
    if dt is None:
        return STABILITY_MARGIN / 2 / params.A
    return dt


def check_stability(params, dt, scale=1.0):
    if not dt > 0:
        raise StabilityError("dt must be > 0 (got {})".format(dt))
    if dt * params.A / scale >= STABILITY_MARGIN:
        raise StabilityError(
            "dt = {:.6g} violates dt*A/eps < {} (A = {:.6g}, eps = {:.6g})".format(
                dt, STABILITY_MARGIN, params.A, scale
            )
        )


class FrozenSystem:
    """Euler-Maruyama stepper of the frozen field on a latitude grid.

    States are arrays of shape (paths, latitudes); all paths share the
    frozen ice line, each path has its own Brownian increments.
    """

    def __init__(self, params, noise, eta, grid=None):
        check_nondegenerate(params)
        self.params = params
        self.noise = noise
        self.eta = float(eta)
        self.grid = grid if grid is not None else LatitudeGrid.uniform(DEFAULT_FROZEN_LATITUDES)
        self.h = np.asarray(forcing_h(params, self.grid.nodes, self.eta), dtype=float)
        self.sigma = noise.field(self.grid.nodes, self.eta)

    def __repr__(self):
        return "<FrozenSystem eta={} {}>".format(self.eta, self.grid)

    def initial_state(self, X0, n_paths):
        X0 = InitialField.coerce(X0)
        return np.tile(X0.on(self.grid), (n_paths, 1))

    def step(self, X, dt, dB):
        """Advance by dt; dB has shape (paths, noises) and variance dt."""
        Z = self.grid.integrate(X)
        drift = -self.params.A * X + self.params.B * Z[:, None] + self.h
        return X + drift * dt + dB @ self.sigma

    def observe(self, X):
        """(xi at the ice line, zeta) for every path."""
        eta = np.full(X.shape[0], self.eta)
        return self.grid.interpolate(X, eta), self.grid.integrate(X)


class FrozenPath:
    def __init__(self, times, xi_at_eta, zeta, eta, seed, index=0):
        self.times = np.asarray(times, dtype=float)
        self.xi_at_eta = np.asarray(xi_at_eta, dtype=float)
        self.zeta = np.asarray(zeta, dtype=float)
        self.eta = float(eta)
        self.seed = seed
        self.index = index

    def __repr__(self):
        return "<FrozenPath eta={} seed={} index={} ({} records)>".format(
            self.eta, self.seed, self.index, self.times.size
        )

    def to_csv(self, filename):
        utils.write_csv_file(
            filename,
            ("t", "xi_at_eta", "zeta"),
            zip(self.times, self.xi_at_eta, self.zeta),
        )


class FrozenEnsemble:
    """Recorded (xi at eta, zeta) for many paths, shape (paths, records)."""

    def __init__(self, times, xi_at_eta, zeta, eta, seed):
        self.times = np.asarray(times, dtype=float)
        self.xi_at_eta = np.asarray(xi_at_eta, dtype=float)
        self.zeta = np.asarray(zeta, dtype=float)
        self.eta = float(eta)
        self.seed = seed

    def __len__(self):
        return self.xi_at_eta.shape[0]

    def path(self, i):
        return FrozenPath(self.times, self.xi_at_eta[i], self.zeta[i], self.eta, self.seed, i)

    def at(self, t):
        """(xi, zeta) samples at the record closest to time t."""
        k = int(np.argmin(np.abs(self.times - t)))
        return self.xi_at_eta[:, k], self.zeta[:, k]


def field_increments(seed, indices, n_steps, n_noise, dt):
    """Brownian increments (paths, steps, noises), path i from its own field stream."""
    out = np.empty((len(indices), n_steps, n_noise))
    for k, i in enumerate(indices):
        field_rng, _ = utils.path_streams(seed, i)
        out[k] = field_rng.standard_normal((n_steps, n_noise))
    return out * np.sqrt(dt)


def _frozen_chunk(task):
    system, X0, n_steps, dt, stride, seed, start, stop = task
    indices = range(start, stop)
    dB = field_increments(seed, indices, n_steps, system.noise.n_field, dt)
    X = system.initial_state(X0, len(indices))
    xi, zeta = system.observe(X)
    xi_rec = [xi]
    zeta_rec = [zeta]
    for n in range(n_steps):
        X = system.step(X, dt, dB[:, n, :])
        if (n + 1) % stride == 0:
            xi, zeta = system.observe(X)
            xi_rec.append(xi)
            zeta_rec.append(zeta)
    return np.stack(xi_rec, axis=1), np.stack(zeta_rec, axis=1)


def _n_steps(T, dt):
    if T < dt:
        raise ValueError("T = {} must be >= dt = {}".format(T, dt))
    return int(round(T / dt))


def sample_frozen_ensemble(
    params,
    noise,
    eta,
    X0,
    T,
    dt=None,
    n_paths=1,
    seed=0,
    grid=None,
    record_stride=1,
    chunk_size=256,
    workers=1,
):
    """Euler-Maruyama paths of the frozen system, one Brownian stream per path."""
    dt = default_frozen_dt(params, dt)
    check_stability(params, dt)
    system = FrozenSystem(params, noise, eta, grid)
    n_steps = _n_steps(T, dt)
    logger.debug(
        "Frozen ensemble eta={} paths={} steps={} dt={:.6g} on {}".format(
            eta, n_paths, n_steps, dt, system.grid
        )
    )
    tasks = [
        (system, X0, n_steps, dt, record_stride, seed, start, stop)
        for start, stop in utils.chunk_ranges(n_paths, chunk_size)
    ]
    results = utils.map_chunks(_frozen_chunk, tasks, workers)
    xi = np.concatenate([r[0] for r in results], axis=0)
    zeta = np.concatenate([r[1] for r in results], axis=0)
    times = dt * np.arange(0, n_steps + 1, record_stride)
    return FrozenEnsemble(times, xi, zeta, eta, seed)


def sample_frozen_path(params, noise, eta, X0, T, dt=None, seed=0, grid=None, index=0):
    """A single frozen path with RNG provenance (seed, index)."""
    dt = default_frozen_dt(params, dt)
    check_stability(params, dt)
    system = FrozenSystem(params, noise, eta, grid)
    n_steps = _n_steps(T, dt)
    xi, zeta = _frozen_chunk((system, X0, n_steps, dt, 1, seed, index, index + 1))
    times = dt * np.arange(n_steps + 1)
    return FrozenPath(times, xi[0], zeta[0], eta, seed, index)
