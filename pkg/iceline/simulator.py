#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

"""Euler-Maruyama integrators for the slow-fast system and the averaged SDE.

Ensembles are advanced as arrays of shape (paths, latitudes). Every path
owns two generators derived from (seed, path index): the field stream
drives the Brownian motions of the temperature field, the iceline stream
drives W. Increments are drawn in fixed-size blocks per stream, so a path
does not depend on how the ensemble is chunked, and an averaged path with
the same (seed, index) and dt sees exactly the W of its slow-fast twin.
"""

import dataclasses
import logging
import math

import numpy as np

from iceline import utils
from iceline.frozen import STABILITY_MARGIN, StabilityError
from iceline.model import (
    InitialField,
    LatitudeGrid,
    ModelParams,
    NoiseSpec,
    drift_f,
    forcing_h,
    truncate01,
)

logger = logging.getLogger(__name__)

NOISE_BLOCK = 4096
DEFAULT_N_LAT = 101
DEFAULT_DT_FRACTION = 0.05

RUN_FIELDS = (
    "epsilon",
    "T",
    "dt",
    "n_lat",
    "n_paths",
    "seed",
    "eta0",
    "X0",
    "record_stride",
    "workers",
)


@dataclasses.dataclass
class RunConfig:
    epsilon: float = 0.01
    T: float = 1.0
    dt: float = None
    n_lat: int = DEFAULT_N_LAT
    n_paths: int = 1
    seed: int = 0
    eta0: float = 0.5
    X0: InitialField = dataclasses.field(default_factory=InitialField)
    record_stride: int = 1
    workers: int = 1

    def __post_init__(self):
        self.X0 = InitialField.coerce(self.X0)

    def step_size(self, params):
        """dt, defaulting to 0.05 eps / A."""
        if self.dt is None:
            return DEFAULT_DT_FRACTION * self.epsilon / params.A
        return float(self.dt)

    def n_steps(self, params):
        dt = self.step_size(params)
        if self.T < dt:
            raise ValueError("T = {} must be >= dt = {}".format(self.T, dt))
        return int(round(self.T / dt))

    def check(self, params):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1] (got {})".format(self.epsilon))
        if not 0.0 < self.eta0 < 1.0:
            raise ValueError("eta0 must lie in (0, 1) (got {})".format(self.eta0))
        if self.n_lat < 2:
            raise ValueError("n_lat must be >= 2 (got {})".format(self.n_lat))
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1 (got {})".format(self.n_paths))
        dt = self.step_size(params)
        if not dt > 0:
            raise StabilityError("dt must be > 0 (got {})".format(dt))
        limit = STABILITY_MARGIN * self.epsilon / params.A
        if dt > limit:
            raise StabilityError(
                "dt = {:.6g} exceeds 0.1 eps / A = {:.6g} (eps = {})".format(dt, limit, self.epsilon)
            )
        return self

    def replace(self, **overrides):
        return dataclasses.replace(self, **overrides)

    def to_dict(self):
        out = {k: getattr(self, k) for k in RUN_FIELDS}
        out["X0"] = self.X0.to_dict()
        return out

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(RUN_FIELDS)
        if unknown:
            raise ValueError("Unknown run field(s): {}".format(", ".join(sorted(unknown))))
        return cls(**d)


@dataclasses.dataclass
class SlowFastState:
    t: float
    field: np.ndarray
    Z: float
    eta: float
    aborted: bool = False
    truncated: bool = False


class IceLinePath:
    def __init__(
        self,
        times,
        eta,
        seed,
        index=0,
        Z=None,
        aborted=False,
        truncations=0,
        max_excursion=0.0,
        snapshot_times=None,
        snapshots=None,
        x=None,
    ):
        self.times = np.asarray(times, dtype=float)
        self.eta = np.asarray(eta, dtype=float)
        self.Z = None if Z is None else np.asarray(Z, dtype=float)
        self.seed = seed
        self.index = index
        self.aborted = bool(aborted)
        self.truncations = int(truncations)
        self.max_excursion = float(max_excursion)
        self.snapshot_times = snapshot_times
        self.snapshots = snapshots
        self.x = x

    def __repr__(self):
        return "<IceLinePath seed={} index={} ({} records{})>".format(
            self.seed, self.index, self.times.size, ", aborted" if self.aborted else ""
        )

    def to_csv(self, filename):
        if self.Z is None:
            utils.write_csv_file(filename, ("t", "eta"), zip(self.times, self.eta))
        else:
            utils.write_csv_file(filename, ("t", "eta", "Z"), zip(self.times, self.eta, self.Z))

    def snapshots_to_csv(self, filename):
        rows = (
            (t, x, X)
            for t, field in zip(self.snapshot_times, self.snapshots)
            for x, X in zip(self.x, field)
        )
        utils.write_csv_file(filename, ("t", "x", "X"), rows)


class EnsembleResult:
    """Recorded ensemble of ice-line paths, arrays indexed by path first."""

    def __init__(
        self,
        times,
        eta,
        Z,
        aborted,
        truncations,
        max_excursion,
        seed,
        snapshot_times=None,
        snapshots=None,
        x=None,
    ):
        self.times = times
        self.eta = eta
        self.Z = Z
        self.aborted = aborted
        self.truncations = truncations
        self.max_excursion = max_excursion
        self.seed = seed
        self.snapshot_times = snapshot_times
        self.snapshots = snapshots
        self.x = x

    def __len__(self):
        return self.eta.shape[0]

    def __repr__(self):
        return "<EnsembleResult {} paths, {} aborted>".format(len(self), self.n_aborted)

    @property
    def n_aborted(self):
        return int(np.sum(self.aborted))

    @property
    def n_truncations(self):
        return int(np.sum(self.truncations))

    @property
    def completed(self):
        return ~self.aborted

    def path(self, i):
        return IceLinePath(
            self.times,
            self.eta[i],
            self.seed,
            i,
            Z=None if self.Z is None else self.Z[i],
            aborted=self.aborted[i],
            truncations=self.truncations[i],
            max_excursion=self.max_excursion[i],
            snapshot_times=self.snapshot_times,
            snapshots=None if self.snapshots is None else self.snapshots[i],
            x=self.x,
        )

    def summary(self):
        done = self.eta[self.completed, -1]
        return {
            "n_paths": len(self),
            "aborted": self.n_aborted,
            "truncation_events": self.n_truncations,
            "max_excursion": float(np.max(self.max_excursion)) if len(self) else 0.0,
            "terminal_eta_mean": float(np.mean(done)) if done.size else None,
            "terminal_eta_stderr": utils.standard_error(done),
        }


class PathNoise:
    """Per-path field and iceline generators for the paths first..last-1."""

    def __init__(self, seed, first, last, n_field=1):
        streams = [utils.path_streams(seed, i) for i in range(first, last)]
        self.field_rngs = [s[0] for s in streams]
        self.iceline_rngs = [s[1] for s in streams]
        self.n_field = n_field

    def field_block(self, m, dt):
        return np.stack([r.standard_normal((m, self.n_field)) for r in self.field_rngs]) * math.sqrt(dt)

    def iceline_block(self, m, dt):
        return np.stack([r.standard_normal(m) for r in self.iceline_rngs]) * math.sqrt(dt)


def _blocks(n_steps):
    step = 0
    while step < n_steps:
        m = min(NOISE_BLOCK, n_steps - step)
        yield step, m
        step += m


class SlowFastSystem:
    """The slow-fast system discretised on a latitude grid."""

    def __init__(self, params, noise, cfg):
        self.params = params
        self.noise = noise
        self.cfg = cfg.check(params)
        self.grid = LatitudeGrid.uniform(cfg.n_lat)
        self.dt = cfg.step_size(params)
        self.eps = cfg.epsilon

    def __repr__(self):
        return "<SlowFastSystem eps={} dt={:.6g} {}>".format(self.eps, self.dt, self.grid)

    def initial(self, n_paths):
        X = np.tile(self.cfg.X0.on(self.grid), (n_paths, 1))
        eta = np.full(n_paths, float(self.cfg.eta0))
        return X, eta

    def advance(self, X, eta, dB, dW):
        """One step for a stack of paths.

        X is (paths, latitudes), eta (paths,), dB (paths, noises) and
        dW (paths,). Returns the new field, the new truncated ice line and
        the ice line before truncation.
        """
        p = self.params
        nodes = self.grid.nodes
        Z = self.grid.integrate(X)
        X_eta = self.grid.interpolate(X, eta)
        h = forcing_h(p, nodes[None, :], eta[:, None])
        sigma = self.noise.field(nodes[None, :], eta[:, None])
        drift = -p.A * X + p.B * Z[:, None] + h
        diffusion = np.einsum("pj,jpn->pn", dB, sigma)
        X_new = X + drift * (self.dt / self.eps) + diffusion / math.sqrt(self.eps)
        raw = (
            eta
            + np.asarray(drift_f(p, eta, X_eta)) * self.dt
            + np.asarray(self.noise.iceline(eta, X_eta, Z)) * dW
        )
        return X_new, truncate01(raw), raw


def step_slowfast(state, cfg, rng=None, params=None, noise=None, dB=None, dW=None):
    """Advance a single SlowFastState by one Euler-Maruyama step.

    Increments are drawn from rng unless dB (one entry per field noise) and
    dW are given. A non-finite result leaves the state unchanged and sets
    aborted.
    """
    params = params if params is not None else ModelParams()
    noise = noise if noise is not None else NoiseSpec.standard()
    system = SlowFastSystem(params, noise, cfg)
    if rng is None and (dB is None or dW is None):
        raise ValueError("step_slowfast needs rng or both dB and dW")
    if state.aborted:
        return state
    if dB is None:
        dB = rng.standard_normal(noise.n_field) * math.sqrt(system.dt)
    if dW is None:
        dW = rng.standard_normal() * math.sqrt(system.dt)
    X = np.asarray(state.field, dtype=float)[None, :]
    X_new, eta_new, raw = system.advance(
        X, np.array([state.eta]), np.atleast_1d(dB)[None, :], np.array([dW])
    )
    if not (np.all(np.isfinite(X_new)) and np.isfinite(raw[0])):
        return dataclasses.replace(state, aborted=True)
    return SlowFastState(
        t=state.t + system.dt,
        field=X_new[0],
        Z=float(system.grid.integrate(X_new[0])),
        eta=float(eta_new[0]),
        truncated=bool(raw[0] < 0.0 or raw[0] > 1.0),
    )


def _slowfast_chunk(task):
    system, seed, first, last, snapshot_stride = task
    cfg = system.cfg
    n = last - first
    n_steps = cfg.n_steps(system.params)
    stride = cfg.record_stride
    noise = PathNoise(seed, first, last, system.noise.n_field)
    X, eta = system.initial(n)
    aborted = np.zeros(n, dtype=bool)
    truncations = np.zeros(n, dtype=int)
    excursion = np.zeros(n)
    eta_rec = [eta.copy()]
    Z_rec = [system.grid.integrate(X)]
    snaps = [X.copy()] if snapshot_stride else None

    for start, m in _blocks(n_steps):
        dB = noise.field_block(m, system.dt)
        dW = noise.iceline_block(m, system.dt)
        for k in range(m):
            with np.errstate(over="ignore", invalid="ignore"):
                X_new, eta_new, raw = system.advance(X, eta, dB[:, k, :], dW[:, k])
                bad = ~(np.all(np.isfinite(X_new), axis=1) & np.isfinite(raw)) & ~aborted
            if bad.any():
                logger.warning(
                    "Aborting {} path(s) with a non-finite state at t = {:.6g}".format(
                        int(bad.sum()), (start + k + 1) * system.dt
                    )
                )
                aborted |= bad
            live = ~aborted
            X[live] = X_new[live]
            eta[live] = eta_new[live]
            out = np.maximum(-raw, raw - 1.0)
            truncations[live] += out[live] > 0
            excursion[live] = np.maximum(excursion[live], out[live])
            n_done = start + k + 1
            if n_done % stride == 0:
                eta_rec.append(eta.copy())
                Z_rec.append(system.grid.integrate(X))
            if snapshot_stride and n_done % snapshot_stride == 0:
                snaps.append(X.copy())
    return {
        "eta": np.stack(eta_rec, axis=1),
        "Z": np.stack(Z_rec, axis=1),
        "aborted": aborted,
        "truncations": truncations,
        "excursion": excursion,
        "snapshots": None if snaps is None else np.stack(snaps, axis=1),
    }


def _combine(results, key):
    if results[0][key] is None:
        return None
    return np.concatenate([r[key] for r in results], axis=0)


def run_slowfast_ensemble(cfg, params=None, noise=None, snapshot_stride=0, first=0, chunk_size=64):
    """Simulate cfg.n_paths slow-fast paths, indices first .. first + n_paths - 1."""
    params = params if params is not None else ModelParams()
    noise = noise if noise is not None else NoiseSpec.standard()
    system = SlowFastSystem(params, noise, cfg)
    n_steps = cfg.n_steps(params)
    logger.debug(
        "Slow-fast ensemble: {} paths, eps={}, dt={:.6g}, {} steps, {}".format(
            cfg.n_paths, cfg.epsilon, system.dt, n_steps, system.grid
        )
    )
    tasks = [
        (system, cfg.seed, first + lo, first + hi, snapshot_stride)
        for lo, hi in utils.chunk_ranges(cfg.n_paths, chunk_size)
    ]
    results = utils.map_chunks(_slowfast_chunk, tasks, cfg.workers)
    times = system.dt * np.arange(0, n_steps + 1, cfg.record_stride)
    snapshot_times = None
    if snapshot_stride:
        snapshot_times = system.dt * np.arange(0, n_steps + 1, snapshot_stride)
    ensemble = EnsembleResult(
        times,
        _combine(results, "eta"),
        _combine(results, "Z"),
        _combine(results, "aborted"),
        _combine(results, "truncations"),
        _combine(results, "excursion"),
        cfg.seed,
        snapshot_times=snapshot_times,
        snapshots=_combine(results, "snapshots"),
        x=system.grid.nodes,
    )
    if ensemble.n_aborted:
        logger.warning("{} of {} paths aborted".format(ensemble.n_aborted, len(ensemble)))
    return ensemble


def run_slowfast(cfg, params=None, noise=None, index=0, snapshot_stride=0):
    """The slow-fast path with RNG provenance (cfg.seed, index)."""
    single = cfg.replace(n_paths=1, workers=1)
    ensemble = run_slowfast_ensemble(single, params, noise, snapshot_stride, first=index)
    path = ensemble.path(0)
    path.index = index
    return path


def _averaged_chunk(task):
    model, cfg, dt, n_steps, first, last, shared_W = task
    n = last - first
    stride = cfg.record_stride
    eta = np.full(n, float(cfg.eta0))
    truncations = np.zeros(n, dtype=int)
    excursion = np.zeros(n)
    eta_rec = [eta.copy()]
    noise = None if shared_W is not None else PathNoise(cfg.seed, first, last)
    for start, m in _blocks(n_steps):
        if shared_W is not None:
            dW = np.broadcast_to(shared_W[start : start + m], (n, m))
        else:
            dW = noise.iceline_block(m, dt)
        for k in range(m):
            raw = eta + model.drift_at(eta) * dt + model.sigma_at(eta) * dW[:, k]
            eta = truncate01(np.atleast_1d(raw))
            out = np.maximum(-raw, raw - 1.0)
            truncations += out > 0
            excursion = np.maximum(excursion, out)
            if (start + k + 1) % stride == 0:
                eta_rec.append(eta.copy())
    return {
        "eta": np.stack(eta_rec, axis=1),
        "truncations": truncations,
        "excursion": excursion,
    }


def _averaged_dt(cfg, model):
    if cfg.dt is not None:
        return float(cfg.dt)
    if model.params is None:
        raise ValueError("dt is required for an averaged model built from functions")
    return cfg.step_size(model.params)


def run_averaged_ensemble(cfg, model, first=0, chunk_size=256):
    """Averaged-SDE paths driven by the iceline streams of (cfg.seed, index)."""
    dt = _averaged_dt(cfg, model)
    if cfg.T < dt:
        raise ValueError("T = {} must be >= dt = {}".format(cfg.T, dt))
    n_steps = int(round(cfg.T / dt))
    tasks = [
        (model, cfg, dt, n_steps, first + lo, first + hi, None)
        for lo, hi in utils.chunk_ranges(cfg.n_paths, chunk_size)
    ]
    results = utils.map_chunks(_averaged_chunk, tasks, cfg.workers)
    n = cfg.n_paths
    return EnsembleResult(
        dt * np.arange(0, n_steps + 1, cfg.record_stride),
        _combine(results, "eta"),
        None,
        np.zeros(n, dtype=bool),
        _combine(results, "truncations"),
        _combine(results, "excursion"),
        cfg.seed,
    )


def run_averaged(cfg, model, shared_W=None, index=0):
    """One path of the averaged SDE.

    shared_W, when given, holds the Brownian increments to use, one per
    step; otherwise they come from the iceline stream of (cfg.seed, index),
    the same increments the slow-fast path with that index uses.
    """
    dt = _averaged_dt(cfg, model)
    n_steps = int(round(cfg.T / dt))
    if shared_W is not None:
        shared_W = np.asarray(shared_W, dtype=float)
        if shared_W.size != n_steps:
            raise ValueError("shared_W has {} increments, {} steps needed".format(shared_W.size, n_steps))
    result = _averaged_chunk((model, cfg, dt, n_steps, index, index + 1, shared_W))
    return IceLinePath(
        dt * np.arange(0, n_steps + 1, cfg.record_stride),
        result["eta"][0],
        cfg.seed,
        index,
        truncations=result["truncations"][0],
        max_excursion=result["excursion"][0],
    )


def iceline_increments(cfg, params, index=0):
    """The W increments the path (cfg.seed, index) sees at the slow-fast dt."""
    dt = cfg.step_size(params)
    n_steps = cfg.n_steps(params)
    noise = PathNoise(cfg.seed, index, index + 1)
    return np.concatenate([noise.iceline_block(m, dt)[0] for _, m in _blocks(n_steps)])
