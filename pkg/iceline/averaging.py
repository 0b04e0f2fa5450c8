#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

"""The averaged ice-line diffusion d eta = f_hat(eta) dt + sigma_hat(eta) dW.

f_hat and sigma_hat are expectations of the ice-line coefficients under the
frozen stationary law. They are tabulated on an eta grid covering [0, 1];
the stationary density and the mean first-passage times only use the part
of the grid inside [delta, 1 - delta], where sigma_hat stays positive.
"""

import dataclasses
import logging
import math
import warnings

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate, optimize, special, stats

from iceline import utils
from iceline.frozen import stationary_law
from iceline.model import default_grid, drift_f

logger = logging.getLogger(__name__)

MIN_QUADRATURE_ORDER = 8
DEFAULT_QUADRATURE_ORDER = 64
DEFAULT_DELTA = 1e-3
DEFAULT_N_GRID = 1001
MIN_N_GRID = 51
ADAPTIVE_HALF_WIDTH = 8.0


class QuadratureOrderError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


class DivergenceWarning(RuntimeWarning):
    pass


def _hermite_rule(order):
    if order < MIN_QUADRATURE_ORDER:
        raise QuadratureOrderError(
            "Gauss-Hermite order must be >= {} (got {})".format(MIN_QUADRATURE_ORDER, order)
        )
    nodes, weights = hermegauss(order)
    return nodes, weights / math.sqrt(2.0 * math.pi)


def averaged_drift(params, noise, eta, order=DEFAULT_QUADRATURE_ORDER, grid=None):
    """E f(eta, xi) with xi ~ N(E xi_inf, Var xi_inf), by Gauss-Hermite quadrature."""
    nodes, weights = _hermite_rule(order)
    law = stationary_law(params, noise, eta, grid=grid)
    if law.is_degenerate:
        return float(drift_f(params, eta, law.mean_xi))
    values = drift_f(params, eta, law.mean_xi + law.std_xi * nodes)
    return float(np.dot(weights, values))


def averaged_drift_adaptive(params, noise, eta, grid=None):
    law = stationary_law(params, noise, eta, grid=grid)
    if law.is_degenerate:
        return float(drift_f(params, eta, law.mean_xi))
    m = law.mean_xi
    s = law.std_xi
    value, _ = integrate.quad(
        lambda xi: drift_f(params, eta, xi) * stats.norm.pdf(xi, loc=m, scale=s),
        m - ADAPTIVE_HALF_WIDTH * s,
        m + ADAPTIVE_HALF_WIDTH * s,
        epsabs=1e-13,
        epsrel=1e-12,
        limit=200,
    )
    return float(value)


def averaged_drift_monte_carlo(params, noise, eta, n=10 ** 6, seed=0, grid=None):
    """(mean, standard error) of f(eta, xi) over n draws from the stationary law."""
    law = stationary_law(params, noise, eta, grid=grid)
    rng = np.random.default_rng(seed)
    xi = law.mean_xi + law.std_xi * rng.standard_normal(n)
    values = np.asarray(drift_f(params, eta, xi))
    return float(np.mean(values)), utils.standard_error(values)


def gaussian_expectation_2d(func, law, order=32):
    """E func(xi, zeta) under a GaussianStationary law, by tensor Gauss-Hermite.

    The covariance may be singular; its square root is taken through an
    eigendecomposition.
    """
    nodes, weights = _hermite_rule(order)
    u, v = np.meshgrid(nodes, nodes, indexing="ij")
    w = np.outer(weights, weights)
    evals, evecs = np.linalg.eigh(law.covariance())
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    points = np.stack([u.ravel(), v.ravel()])
    xi, zeta = law.mean()[:, None] + root @ points
    return float(np.dot(w.ravel(), func(xi, zeta)))


def averaged_diffusion_sq(params, noise, eta, order=32, grid=None):
    """sigma_hat(eta)^2; exact when the ice-line amplitude ignores the fast variables."""
    if not noise.iceline_state_dependent:
        return float(np.asarray(noise.iceline(eta)) ** 2)
    law = stationary_law(params, noise, eta, grid=grid)
    return gaussian_expectation_2d(
        lambda xi, zeta: np.asarray(noise.iceline(eta, xi, zeta), dtype=float) ** 2,
        law,
        order,
    )


class AveragedDrift:
    """Picklable f_hat(eta) evaluator, used to refine roots off the grid."""

    def __init__(self, params, noise, order=DEFAULT_QUADRATURE_ORDER, grid=None):
        self.params = params
        self.noise = noise
        self.order = order
        self.grid = grid

    def __call__(self, eta):
        return averaged_drift(self.params, self.noise, eta, self.order, self.grid)

    def __repr__(self):
        return "<AveragedDrift Q={} order={}>".format(self.params.Q, self.order)


@dataclasses.dataclass(frozen=True)
class Equilibrium:
    location: float
    stable: bool
    residual: float
    slope: float = math.nan

    def to_dict(self):
        return dataclasses.asdict(self)


class AveragedModel:
    """Tabulated averaged coefficients and everything derived from them.

    drift and sigma are optional exact callables. With exact=True the
    integrators evaluate them directly instead of interpolating the
    tabulation.
    """

    def __init__(
        self,
        eta_grid,
        f_hat,
        sigma_hat,
        delta=DEFAULT_DELTA,
        drift=None,
        sigma=None,
        exact=False,
        params=None,
        noise=None,
        order=None,
    ):
        self.eta_grid = np.asarray(eta_grid, dtype=float)
        self.f_hat = np.asarray(f_hat, dtype=float)
        self.sigma_hat = np.asarray(sigma_hat, dtype=float)
        self.delta = float(delta)
        self.drift = drift
        self.sigma = sigma
        self.exact = exact
        self.params = params
        self.noise = noise
        self.order = order
        self.equilibria = []
        self.log_density = None
        self.density = None
        self.modes = []
        self.mfpt = None

    def __repr__(self):
        return "<AveragedModel {} nodes, delta={}>".format(self.eta_grid.size, self.delta)

    @classmethod
    def from_functions(cls, drift, sigma, n_grid=DEFAULT_N_GRID, delta=DEFAULT_DELTA, exact=False):
        """Tabulate user supplied f_hat(eta) and sigma_hat(eta) callables."""
        eta_grid = averaging_grid(n_grid, delta)
        f_hat = np.array([drift(e) for e in eta_grid], dtype=float)
        sigma_hat = np.array([sigma(e) for e in eta_grid], dtype=float)
        return cls(eta_grid, f_hat, sigma_hat, delta, drift=drift, sigma=sigma, exact=exact)

    @property
    def domain(self):
        """Boolean mask of the grid nodes inside [delta, 1 - delta]."""
        tol = 1e-12
        return (self.eta_grid >= self.delta - tol) & (self.eta_grid <= 1.0 - self.delta + tol)

    @property
    def domain_grid(self):
        return self.eta_grid[self.domain]

    @property
    def lipschitz_estimate(self):
        return float(np.max(np.abs(np.diff(self.f_hat) / np.diff(self.eta_grid))))

    def drift_at(self, eta):
        if self.exact and self.drift is not None:
            return np.vectorize(self.drift, otypes=[float])(eta)
        return np.interp(eta, self.eta_grid, self.f_hat)

    def sigma_at(self, eta):
        if self.sigma is not None:
            return np.broadcast_to(np.asarray(self.sigma(eta), dtype=float), np.shape(eta)).copy()
        return np.interp(eta, self.eta_grid, self.sigma_hat)

    @property
    def stable_equilibria(self):
        return [e for e in self.equilibria if e.stable]

    def to_csv(self, filename):
        """eta, f_hat, sigma_hat and, once computed, the density (zero outside the truncated domain)."""
        if self.density is None:
            utils.write_csv_file(
                filename, ("eta", "f_hat", "sigma_hat"), zip(self.eta_grid, self.f_hat, self.sigma_hat)
            )
            return
        density = np.zeros_like(self.eta_grid)
        density[self.domain] = self.density
        utils.write_csv_file(
            filename,
            ("eta", "f_hat", "sigma_hat", "density"),
            zip(self.eta_grid, self.f_hat, self.sigma_hat, density),
        )

    def to_dict(self):
        out = {
            "delta": self.delta,
            "n_grid": int(self.eta_grid.size),
            "quadrature_order": self.order,
            "lipschitz_estimate": self.lipschitz_estimate,
            "equilibria": [e.to_dict() for e in self.equilibria],
            "modes": list(self.modes),
        }
        if self.density is not None:
            out["mean_value"] = mean_value(self)
        if self.mfpt is not None:
            out["mfpt"] = self.mfpt
        return out


def averaging_grid(n_grid=DEFAULT_N_GRID, delta=DEFAULT_DELTA):
    """Uniform grid on [0, 1] with delta and 1 - delta added as nodes."""
    if n_grid < MIN_N_GRID:
        raise ValueError("n_grid must be >= {} (got {})".format(MIN_N_GRID, n_grid))
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2) (got {})".format(delta))
    nodes = np.concatenate([np.linspace(0.0, 1.0, n_grid), [delta, 1.0 - delta]])
    nodes = np.unique(np.round(nodes, 15))
    return nodes


def _tabulate_chunk(task):
    params, noise, etas, order, grid = task
    f_hat = [averaged_drift(params, noise, e, order, grid) for e in etas]
    sigma_sq = [averaged_diffusion_sq(params, noise, e, grid=grid) for e in etas]
    return f_hat, sigma_sq


def tabulate(
    params,
    noise,
    n_grid=DEFAULT_N_GRID,
    delta=DEFAULT_DELTA,
    order=DEFAULT_QUADRATURE_ORDER,
    grid=None,
    workers=1,
    chunk_size=128,
):
    """f_hat and sigma_hat on averaging_grid(n_grid, delta)."""
    grid = default_grid(grid)
    eta_grid = averaging_grid(n_grid, delta)
    logger.debug(
        "Tabulating averaged coefficients on {} nodes (order {}, Q={})".format(
            eta_grid.size, order, params.Q
        )
    )
    tasks = [
        (params, noise, eta_grid[start:stop], order, grid)
        for start, stop in utils.chunk_ranges(eta_grid.size, chunk_size)
    ]
    results = utils.map_chunks(_tabulate_chunk, tasks, workers)
    f_hat = np.concatenate([r[0] for r in results])
    sigma_hat = np.sqrt(np.concatenate([r[1] for r in results]))
    return AveragedModel(
        eta_grid,
        f_hat,
        sigma_hat,
        delta,
        drift=AveragedDrift(params, noise, order, grid),
        sigma=None if noise.iceline_state_dependent else noise.iceline_amplitude,
        params=params,
        noise=noise,
        order=order,
    )


def _slope_at(func, x, h, lo=0.0, hi=1.0):
    """Centered difference of func at x with step h, one-sided at the edges of [lo, hi]."""
    a = max(x - h, lo)
    b = min(x + h, hi)
    return (float(func(b)) - float(func(a))) / (b - a)


def find_equilibria(model):
    """Sign changes of f_hat refined to roots, stable when f_hat decreases through them."""
    e = model.eta_grid
    f = model.f_hat
    func = model.drift if model.drift is not None else (lambda x: float(np.interp(x, e, f)))
    lo, hi = float(e[0]), float(e[-1])
    equilibria = []
    k = 0
    while k < e.size - 1:
        if f[k] == 0.0:
            slope = _slope_at(func, float(e[k]), float(e[k + 1] - e[k]), lo, hi)
            equilibria.append(Equilibrium(float(e[k]), bool(slope < 0), 0.0, slope))
            k += 1
            continue
        if f[k] * f[k + 1] < 0.0:
            root = optimize.brentq(func, e[k], e[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            slope = _slope_at(func, root, float(e[k + 1] - e[k]), lo, hi)
            equilibria.append(Equilibrium(float(root), bool(slope < 0), abs(float(func(root))), slope))
        k += 1
    if f[-1] == 0.0:
        slope = _slope_at(func, float(e[-1]), float(e[-1] - e[-2]), lo, hi)
        equilibria.append(Equilibrium(float(e[-1]), bool(slope < 0), 0.0, slope))
    model.equilibria = equilibria
    logger.debug("Equilibria: {}".format(equilibria))
    return equilibria


def stationary_density(model, anchor=0.5):
    """Normalized stationary density on the truncated grid.

    The log-density 2 int_anchor^eta f_hat / sigma_hat^2 - 2 log sigma_hat is
    kept on the model as well, since the density itself underflows far
    from the deepest well.
    """
    e = model.domain_grid
    f = model.f_hat[model.domain]
    s = model.sigma_hat[model.domain]
    if not np.all(s > 0):
        raise DivergenceError(
            "sigma_hat vanishes inside [{0}, 1 - {0}]".format(model.delta)
        )
    potential = integrate.cumulative_trapezoid(2.0 * f / s ** 2, e, initial=0.0)
    potential = potential - np.interp(anchor, e, potential)
    log_density = potential - 2.0 * np.log(s)
    top = np.max(log_density)
    norm = integrate.trapezoid(np.exp(log_density - top), e)
    log_norm = top + math.log(norm) if norm > 0 else math.inf
    if not (math.isfinite(top) and math.isfinite(log_norm)):
        raise DivergenceError("stationary density is not normalizable on the truncated domain")
    model.log_density = log_density - log_norm
    model.density = np.exp(model.log_density)
    model.modes = find_modes(model)
    return model.density


def find_modes(model):
    """Local maxima of the log stationary density, domain edges included."""
    if model.log_density is None:
        stationary_density(model)
    e = model.domain_grid
    lp = model.log_density
    padded = np.concatenate([[-np.inf], lp, [-np.inf]])
    is_max = (padded[1:-1] > padded[:-2]) & (padded[1:-1] >= padded[2:])
    return [float(x) for x in e[is_max]]


def mean_value(model):
    if model.density is None:
        stationary_density(model)
    e = model.domain_grid
    return float(integrate.trapezoid(e * model.density, e))


def stationary_cdf(model):
    """Distribution function of the stationary density, as a callable on eta."""
    if model.density is None:
        stationary_density(model)
    e = model.domain_grid
    cdf = integrate.cumulative_trapezoid(model.density, e, initial=0.0)
    cdf = cdf / cdf[-1]
    return lambda x: np.interp(x, e, cdf)


def density_ks_distance(model, samples):
    """Kolmogorov-Smirnov distance between ice-line samples and the stationary law."""
    samples = np.ravel(np.asarray(samples, dtype=float))
    return float(stats.kstest(samples, stationary_cdf(model)).statistic)


def _log_trapezoid(log_values, x):
    """log of the cumulative trapezoid integral of exp(log_values), starting at 0."""
    h = np.diff(x)
    pieces = np.log(h / 2.0) + np.logaddexp(log_values[:-1], log_values[1:])
    return np.concatenate([[-np.inf], np.logaddexp.accumulate(pieces)])


def log_mean_first_passage(model, start, target, reflect_at=None):
    """Natural log of the mean time to reach target from start.

    The boundary behind start (default: the truncated domain edge) is
    reflecting. Returns inf with a DivergenceWarning when the speed density
    blows up on the reflecting side.
    """
    if start == target:
        raise ValueError("start and target must differ")
    lo = model.delta
    hi = 1.0 - model.delta
    for name, v in (("start", start), ("target", target)):
        if not lo - 1e-12 <= v <= hi + 1e-12:
            raise ValueError("{} = {} outside [{}, {}]".format(name, v, lo, hi))
    upward = target > start
    if reflect_at is None:
        reflect_at = lo if upward else hi
    if (upward and reflect_at > start) or (not upward and reflect_at < start):
        raise ValueError("reflect_at = {} is not behind start = {}".format(reflect_at, start))

    a, b = sorted((reflect_at, target))
    e = model.eta_grid
    nodes = np.unique(np.concatenate([e[(e > a) & (e < b)], [a, b, start]]))
    f = model.drift_at(nodes)
    s = model.sigma_at(nodes)
    with np.errstate(divide="ignore"):
        log_s2 = 2.0 * np.log(np.abs(s))
    if not np.all(np.isfinite(log_s2)):
        warnings.warn(
            "sigma_hat vanishes between {} and {}; passage time unbounded".format(a, b),
            DivergenceWarning,
        )
        logger.warning("MFPT {} -> {} diverges (sigma_hat = 0 on the path)".format(start, target))
        return math.inf

    # Walk from the reflecting barrier towards the target
    if not upward:
        nodes = -nodes[::-1]
        f = -f[::-1]
        log_s2 = log_s2[::-1]
        start, target = -start, -target
    phi = integrate.cumulative_trapezoid(2.0 * f / np.exp(log_s2), nodes, initial=0.0)
    log_scale = -phi
    log_speed = phi - log_s2
    log_inner = _log_trapezoid(log_speed, nodes)
    if not np.all(np.isfinite(log_inner[1:])):
        warnings.warn("speed integral overflowed near {}".format(reflect_at), DivergenceWarning)
        return math.inf
    i0 = int(np.searchsorted(nodes, start))
    outer = log_scale[i0:] + log_inner[i0:]
    if outer.size < 2:
        return -math.inf
    h = np.diff(nodes[i0:])
    log_T = math.log(2.0) + special.logsumexp(
        np.log(h / 2.0) + np.logaddexp(outer[:-1], outer[1:])
    )
    return float(log_T)


def mean_first_passage(model, start, target, reflect_at=None):
    log_T = log_mean_first_passage(model, start, target, reflect_at)
    with np.errstate(over="ignore"):
        return float(np.exp(log_T))


def _clip_to_domain(model, v):
    return float(np.clip(v, model.delta, 1.0 - model.delta))


def mfpt_matrix(model):
    """Transition times between every ordered pair of stable equilibria.

    Equilibria outside the truncated domain are replaced by its nearest edge.
    """
    if not model.equilibria:
        find_equilibria(model)
    locations = [_clip_to_domain(model, eq.location) for eq in model.stable_equilibria]
    n = len(locations)
    log10_times = [[None] * n for _ in range(n)]
    times = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            log_T = log_mean_first_passage(model, locations[i], locations[j])
            log10_times[i][j] = log_T / math.log(10.0)
            times[i][j] = math.exp(log_T) if log_T < math.log(np.finfo(float).max) else math.inf
            logger.debug(
                "MFPT {:.6g} -> {:.6g}: log10 T = {:.6g}".format(
                    locations[i], locations[j], log10_times[i][j]
                )
            )
    model.mfpt = {"locations": locations, "log10_times": log10_times, "times": times}
    return model.mfpt


class MonteCarloEstimate:
    def __init__(self, mean, stderr, n_paths, censored=0):
        self.mean = mean
        self.stderr = stderr
        self.n_paths = n_paths
        self.censored = censored

    def __repr__(self):
        return "<MonteCarloEstimate {:.6g} +/- {:.2g} (n={}, censored={})>".format(
            self.mean, self.stderr, self.n_paths, self.censored
        )

    def to_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "censored": self.censored,
        }


def _first_passage_chunk(task):
    model, start, target, reflect_at, dt, max_steps, block, seed, first, last = task
    n = last - first
    rngs = [utils.path_streams(seed, i)[1] for i in range(first, last)]
    sign = 1.0 if target > start else -1.0
    eta = np.full(n, float(start))
    hit = np.full(n, np.nan)
    alive = np.ones(n, dtype=bool)
    sqdt = math.sqrt(dt)
    step = 0
    while step < max_steps and alive.any():
        m = min(block, max_steps - step)
        dW = np.stack([r.standard_normal(m) for r in rngs]) * sqdt
        U = np.stack([r.random(m) for r in rngs])
        for k in range(m):
            idx = np.flatnonzero(alive)
            x0 = eta[idx]
            s = model.sigma_at(x0)
            x1 = x0 + model.drift_at(x0) * dt + s * dW[idx, k]
            # Reflection at the barrier behind the start
            x1 = np.where(sign * (x1 - reflect_at) < 0, 2 * reflect_at - x1, x1)
            gap0 = sign * (target - x0)
            gap1 = sign * (target - x1)
            with np.errstate(divide="ignore", over="ignore"):
                bridge = np.exp(-2.0 * gap0 * np.clip(gap1, 0, None) / (s ** 2 * dt))
            crossed = (gap1 <= 0) | (U[idx, k] < bridge)
            eta[idx] = x1
            hit[idx[crossed]] = (step + k + 1) * dt
            alive[idx[crossed]] = False
        step += m
    return hit


def mfpt_monte_carlo(
    model,
    start,
    target,
    n_paths=10000,
    dt=1e-4,
    seed=0,
    reflect_at=None,
    max_time=None,
    workers=1,
    chunk_size=500,
):
    """First-hit Monte Carlo of the averaged SDE, the check on the quadrature.

    Crossings between steps are caught with the Brownian bridge probability.
    Paths still running at max_time are censored and left out of the mean.
    """
    if reflect_at is None:
        reflect_at = model.delta if target > start else 1.0 - model.delta
    if max_time is None:
        max_time = 1e3
    max_steps = int(math.ceil(max_time / dt))
    tasks = [
        (model, start, target, reflect_at, dt, max_steps, 1000, seed, first, last)
        for first, last in utils.chunk_ranges(n_paths, chunk_size)
    ]
    hits = np.concatenate(utils.map_chunks(_first_passage_chunk, tasks, workers))
    done = hits[np.isfinite(hits)]
    censored = int(n_paths - done.size)
    if censored:
        logger.warning("{} of {} first-passage paths censored at t = {}".format(censored, n_paths, max_time))
    mean = float(np.mean(done)) if done.size else math.nan
    return MonteCarloEstimate(mean, utils.standard_error(done), n_paths, censored)


def drift_curve(
    params,
    noise,
    q_values=(327.0, 343.0, 350.0),
    n_grid=DEFAULT_N_GRID,
    delta=DEFAULT_DELTA,
    order=DEFAULT_QUADRATURE_ORDER,
    grid=None,
    workers=1,
):
    """One tabulated AveragedModel per insolation value Q, keyed by Q."""
    curves = {}
    for q in q_values:
        model = tabulate(params.replace(Q=q), noise, n_grid, delta, order, grid, workers)
        find_equilibria(model)
        curves[float(q)] = model
    return curves
