#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

import logging
import math
import warnings

import numpy as np
from scipy import stats

from iceline import utils
from iceline.averaging import averaged_drift, tabulate
from iceline.frozen import default_frozen_dt, sample_frozen_ensemble
from iceline.model import SOBOLEV_CONSTANT, LatitudeGrid, ModelParams, NoiseSpec, drift_f
from iceline.simulator import (
    DEFAULT_N_LAT,
    run_averaged_ensemble,
    run_slowfast_ensemble,
)

logger = logging.getLogger(__name__)

MIN_SOBOLEV_LATITUDES = 11
# Below eps ~ 4e-3 the fast field decorrelates faster than the ice line relaxes
CONVERGENCE_EPSILONS = (1e-3, 3e-4, 1e-4)
MAX_RECORDED_STEPS = 20000
EXACT_TOLERANCE = 1e-9


def _mean_and_stderr(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return math.nan, math.nan
    return float(np.mean(samples)), utils.standard_error(samples)


def _separated(a, sa, b, sb, k=2.0):
    """a exceeds b by more than k combined standard errors."""
    return a - b > k * math.sqrt(sa ** 2 + sb ** 2)


class ConvergenceReport:
    def __init__(self, epsilons, sup_errors, sup_stderrs, exceed_probs, exceed_stderrs, delta, n_paths, seed, aborted):
        self.epsilons = list(epsilons)
        self.sup_errors = list(sup_errors)
        self.sup_stderrs = list(sup_stderrs)
        self.exceed_probs = list(exceed_probs)
        self.exceed_stderrs = list(exceed_stderrs)
        self.delta = delta
        self.n_paths = n_paths
        self.seed = seed
        self.aborted = list(aborted)

    def __repr__(self):
        return "<ConvergenceReport eps={} sup_errors={}>".format(self.epsilons, self.sup_errors)

    @property
    def strictly_decreasing(self):
        """Each sup error exceeds the next one by more than two standard errors."""
        return all(
            _separated(self.sup_errors[k], self.sup_stderrs[k], self.sup_errors[k + 1], self.sup_stderrs[k + 1])
            for k in range(len(self.epsilons) - 1)
        )

    @property
    def exceed_nonincreasing(self):
        """No exceedance probability rises by more than two standard errors."""
        return not any(
            _separated(self.exceed_probs[k + 1], self.exceed_stderrs[k + 1], self.exceed_probs[k], self.exceed_stderrs[k])
            for k in range(len(self.epsilons) - 1)
        )

    @property
    def passed(self):
        """Sup errors fall along the ladder, or vanish on every rung."""
        exact = all(e < EXACT_TOLERANCE for e in self.sup_errors)
        return (self.strictly_decreasing or exact) and self.exceed_nonincreasing

    def to_dict(self):
        return {
            "epsilons": self.epsilons,
            "sup_errors": self.sup_errors,
            "sup_stderrs": self.sup_stderrs,
            "exceed_probs": self.exceed_probs,
            "exceed_stderrs": self.exceed_stderrs,
            "delta": self.delta,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "aborted": self.aborted,
            "strictly_decreasing": self.strictly_decreasing,
            "exceed_nonincreasing": self.exceed_nonincreasing,
            "passed": self.passed,
        }


def convergence_experiment(
    cfg_base,
    params=None,
    noise=None,
    epsilons=CONVERGENCE_EPSILONS,
    delta=0.1,
    model=None,
    n_grid=1001,
):
    """Couple slow-fast paths with averaged paths driven by the same W.

    Path i of every ladder rung and its averaged twin draw W from the
    iceline stream of (seed, i); the field noise is independent of W.
    """
    params = params if params is not None else ModelParams()
    noise = noise if noise is not None else NoiseSpec.standard()
    epsilons = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilon ladder must be strictly decreasing (got {})".format(epsilons))
    if model is None:
        model = tabulate(params, noise, n_grid=n_grid, workers=cfg_base.workers)

    sup_errors, sup_stderrs, probs, prob_stderrs, aborted = [], [], [], [], []
    for eps in epsilons:
        cfg = cfg_base.replace(epsilon=eps, dt=None, record_stride=1)
        cfg = cfg.replace(record_stride=max(1, cfg.n_steps(params) // MAX_RECORDED_STEPS))
        logger.debug("Convergence: eps = {}, dt = {:.6g}".format(eps, cfg.step_size(params)))
        slowfast = run_slowfast_ensemble(cfg, params, noise)
        averaged = run_averaged_ensemble(cfg, model)
        keep = slowfast.completed
        sup = np.max(np.abs(slowfast.eta[keep] - averaged.eta[keep]), axis=1)
        mean, se = _mean_and_stderr(sup)
        n = int(sup.size)
        p = float(np.mean(sup > delta)) if n else math.nan
        sup_errors.append(mean)
        sup_stderrs.append(se)
        probs.append(p)
        prob_stderrs.append(math.sqrt(p * (1.0 - p) / n) if n else math.nan)
        aborted.append(slowfast.n_aborted)
        logger.info("eps = {}: E sup|eta_eps - eta_hat| = {:.4g} +/- {:.2g}, P(sup > {}) = {:.3g}".format(
            eps, mean, se, delta, p
        ))
    report = ConvergenceReport(
        epsilons, sup_errors, sup_stderrs, probs, prob_stderrs, delta, cfg_base.n_paths, cfg_base.seed, aborted
    )
    if not report.passed:
        logger.error(
            "Sup errors {} do not decrease along eps = {}".format(
                ["{:.4g}".format(e) for e in sup_errors], epsilons
            )
        )
    return report


def confinement_experiment(cfg, params=None, noise=None):
    """Count ice-line excursions out of [0, 1] before truncation."""
    params = params if params is not None else ModelParams()
    noise = noise if noise is not None else NoiseSpec.standard()
    ensemble = run_slowfast_ensemble(cfg, params, noise)
    dt = cfg.step_size(params)
    eta = np.linspace(0.0, 1.0, 1001)
    sigma_max = float(np.max(np.abs(noise.iceline(eta, np.zeros_like(eta), np.zeros_like(eta)))))
    summary = ensemble.summary()
    summary.update(
        {
            "epsilon": cfg.epsilon,
            "T": cfg.T,
            "dt": dt,
            "noise_scale": sigma_max * math.sqrt(dt),
            "eta_min": float(np.min(ensemble.eta[ensemble.completed])) if len(ensemble) else None,
            "eta_max": float(np.max(ensemble.eta[ensemble.completed])) if len(ensemble) else None,
            "confined": ensemble.n_truncations == 0 and ensemble.n_aborted == 0,
        }
    )
    logger.info(
        "Confinement: {} truncation events, {} aborted paths over {} paths".format(
            summary["truncation_events"], summary["aborted"], summary["n_paths"]
        )
    )
    return summary


class ErgodicReport:
    def __init__(self, eta, horizons, errors, stderrs, f_hat, exponent, n_paths, seed):
        self.eta = eta
        self.horizons = list(horizons)
        self.errors = list(errors)
        self.stderrs = list(stderrs)
        self.f_hat = f_hat
        self.exponent = exponent
        self.n_paths = n_paths
        self.seed = seed

    def __repr__(self):
        return "<ErgodicReport eta={} exponent={}>".format(self.eta, self.exponent)

    def to_dict(self):
        return {
            "eta": self.eta,
            "horizons": self.horizons,
            "errors": self.errors,
            "stderrs": self.stderrs,
            "f_hat": self.f_hat,
            "exponent": self.exponent,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


def ergodic_average_experiment(
    params,
    noise,
    eta,
    horizons=(25.0, 50.0, 100.0, 200.0),
    n_paths=200,
    dt=None,
    seed=0,
    X0=0.0,
    n_lat=DEFAULT_N_LAT,
    order=64,
    workers=1,
):
    """E|T^-1 int_0^T f(eta, xi(s, eta)) ds - f_hat(eta)| along frozen paths, per horizon."""
    if n_paths < 2:
        raise ValueError("ergodic averages need at least 2 paths for a standard error (got {})".format(n_paths))
    horizons = sorted(float(T) for T in horizons)
    grid = LatitudeGrid.uniform(n_lat)
    dt = default_frozen_dt(params, dt)
    f_hat = averaged_drift(params, noise, eta, order, grid)
    ensemble = sample_frozen_ensemble(
        params, noise, eta, X0, horizons[-1], dt, n_paths, seed, grid, workers=workers
    )
    values = np.asarray(drift_f(params, eta, ensemble.xi_at_eta))
    # left Riemann sum of f along each path
    running = np.concatenate([np.zeros((len(ensemble), 1)), np.cumsum(values[:, :-1], axis=1) * dt], axis=1)
    errors, stderrs = [], []
    for T in horizons:
        k = int(np.argmin(np.abs(ensemble.times - T)))
        mean, se = _mean_and_stderr(np.abs(running[:, k] / ensemble.times[k] - f_hat))
        errors.append(mean)
        stderrs.append(se)
        logger.debug("Ergodic average eta={} T={}: error {:.4g} +/- {:.2g}".format(eta, T, mean, se))
    exponent = None
    if len(horizons) > 1 and all(e > 0 for e in errors):
        exponent = float(np.polyfit(np.log(horizons), np.log(errors), 1)[0])
    return ErgodicReport(float(eta), horizons, errors, stderrs, f_hat, exponent, n_paths, seed)


def sobolev_norm_sq(values, grid):
    """||X||^2_{W^{1,2}} of the piecewise linear field through the grid values."""
    values = np.asarray(values, dtype=float)
    return grid.integrate(values ** 2) + grid.dirichlet(values)


class SobolevReport:
    def __init__(self, times, mean_norm_sq, running_max, bound_holds, worst_ratio, slope, slope_stderr):
        self.times = times
        self.mean_norm_sq = mean_norm_sq
        self.running_max = running_max
        self.bound_holds = bound_holds
        self.worst_ratio = worst_ratio
        self.slope = slope
        self.slope_stderr = slope_stderr

    def __repr__(self):
        return "<SobolevReport {} snapshots, max {:.4g}>".format(len(self.times), float(self.running_max[-1]))

    @property
    def sobolev_constant(self):
        return SOBOLEV_CONSTANT

    @property
    def plateau(self):
        """No growth over the final half: fitted slope not above zero by two standard errors."""
        return self.slope <= 2.0 * self.slope_stderr

    def to_csv(self, filename):
        utils.write_csv_file(
            filename, ("t", "mean_norm_sq", "running_max"), zip(self.times, self.mean_norm_sq, self.running_max)
        )

    def to_dict(self):
        return {
            "sobolev_constant": SOBOLEV_CONSTANT,
            "bound_holds": self.bound_holds,
            "worst_ratio": self.worst_ratio,
            "max_mean_norm_sq": float(self.running_max[-1]),
            "final_half_slope": self.slope,
            "final_half_slope_stderr": self.slope_stderr,
            "plateau": self.plateau,
        }


def sobolev_diagnostic(result):
    """W^{1,2} norms of the field snapshots of a path or an ensemble.

    Checks sup|X| <= tanh(1)^{-1/2} ||X||_{W^{1,2}} on every snapshot and
    fits a line to the ensemble mean norm over the final half of the run.
    """
    snapshots = np.asarray(result.snapshots, dtype=float)
    if snapshots.ndim == 2:
        snapshots = snapshots[None]
    times = np.asarray(result.snapshot_times, dtype=float)
    grid = LatitudeGrid.from_nodes(result.x)
    if len(grid) < MIN_SOBOLEV_LATITUDES:
        msg = "{} latitudes are too coarse for a W^1,2 diagnostic (need >= {})".format(
            len(grid), MIN_SOBOLEV_LATITUDES
        )
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning)
    norm_sq = sobolev_norm_sq(snapshots, grid)
    sup = np.max(np.abs(snapshots), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(norm_sq > 0, sup / (SOBOLEV_CONSTANT * np.sqrt(norm_sq)), 0.0)
    mean = np.mean(norm_sq, axis=0)
    running_max = np.maximum.accumulate(mean)
    half = times >= times[-1] / 2.0
    if np.sum(half) >= 3:
        fit = stats.linregress(times[half], mean[half])
        slope, slope_stderr = float(fit.slope), float(fit.stderr)
    else:
        slope, slope_stderr = 0.0, math.inf
    return SobolevReport(
        times, mean, running_max, bool(np.all(ratio <= 1.0 + 1e-12)), float(np.max(ratio)), slope, slope_stderr
    )


class WeakRefinementReport:
    def __init__(self, dts, means, stderrs, differences, difference_stderrs):
        self.dts = list(dts)
        self.means = list(means)
        self.stderrs = list(stderrs)
        self.differences = list(differences)
        self.difference_stderrs = list(difference_stderrs)

    def __repr__(self):
        return "<WeakRefinementReport dts={} differences={}>".format(self.dts, self.differences)

    @property
    def decreasing(self):
        return all(b < a for a, b in zip(self.differences, self.differences[1:]))

    @property
    def ratios(self):
        return [a / b if b > 0 else math.inf for a, b in zip(self.differences, self.differences[1:])]

    def to_dict(self):
        return {
            "dts": self.dts,
            "means": self.means,
            "stderrs": self.stderrs,
            "differences": self.differences,
            "difference_stderrs": self.difference_stderrs,
            "ratios": self.ratios,
            "decreasing": self.decreasing,
        }


def weak_refinement(cfg, model, dt=0.02, levels=4):
    """Terminal mean of the averaged SDE under successive dt halving.

    All levels share one Brownian path per ensemble member: the finest
    increments come from the iceline stream of (seed, index) and coarser
    levels sum consecutive pairs, so level differences carry little noise.
    """
    dts = [dt / 2 ** k for k in range(levels)]
    n_coarse = int(round(cfg.T / dt))
    n_fine = n_coarse * 2 ** (levels - 1)
    rngs = [utils.path_streams(cfg.seed, i)[1] for i in range(cfg.n_paths)]
    fine = np.stack([r.standard_normal(n_fine) for r in rngs]) * math.sqrt(dts[-1])
    terminal = []
    for k, h in enumerate(dts):
        group = 2 ** (levels - 1 - k)
        dW = fine.reshape(cfg.n_paths, n_fine // group, group).sum(axis=2)
        eta = np.full(cfg.n_paths, float(cfg.eta0))
        for n in range(dW.shape[1]):
            eta = np.clip(eta + model.drift_at(eta) * h + model.sigma_at(eta) * dW[:, n], 0.0, 1.0)
        terminal.append(eta)
        logger.debug("Weak refinement dt={:.6g}: mean {:.6g}".format(h, float(np.mean(eta))))
    means, stderrs = zip(*(_mean_and_stderr(t) for t in terminal))
    diffs, diff_stderrs = [], []
    for a, b in zip(terminal, terminal[1:]):
        m, se = _mean_and_stderr(a - b)
        diffs.append(abs(m))
        diff_stderrs.append(se)
    return WeakRefinementReport(dts, means, stderrs, diffs, diff_stderrs)

