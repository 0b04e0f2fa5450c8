#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

import copy
import datetime
import time

from .model import ModelParams, NoiseSpec
from .simulator import RunConfig

__version__ = "1.0"

KINDS = (
    "drift-curve",
    "density",
    "equilibria",
    "mfpt",
    "simulate",
    "converge",
    "ergodic",
    "sobolev",
    "validate",
    "confine",
)

DEFAULT_NOISE = {
    "field": "standard",
    "field_scale": 1.0,
    "iceline": "standard",
    "iceline_scale": 1.0,
}

DEFAULT_OPTIONS = {
    "n_grid": 1001,
    "quadrature_order": 64,
    "delta": 0.001,
    "q_values": [327.0, 343.0, 350.0],
    "etas": [0.5],
    "epsilons": [1e-3, 3e-4, 1e-4],
    "threshold": 0.1,
    "horizons": [25.0, 50.0, 100.0, 200.0],
    "snapshot_stride": 100,
    "mfpt_from": None,
    "mfpt_to": None,
    "reflect_at": None,
    "mc_paths": 0,
    "mc_dt": 1e-4,
    "weak_levels": 0,
    "weak_dt": 0.02,
    "kappa_prime": None,
    "mu_sup": 1.0,
}

# Run settings that differ from RunConfig per experiment kind
KIND_RUN_DEFAULTS = {
    "converge": {"n_paths": 200},
    "ergodic": {"n_paths": 200},
}


class ExperimentSpec(object):
    def __init__(self, kind):
        self.kind = kind
        self.params = ModelParams()
        self.noise_config = copy.deepcopy(DEFAULT_NOISE)
        self.run = RunConfig(**KIND_RUN_DEFAULTS.get(kind, {}))
        self.options = copy.deepcopy(DEFAULT_OPTIONS)
        self.output_dir = "iceline-out"
        self.raw_config = {}

    @property
    def noise(self):
        return NoiseSpec.from_names(**self.noise_config)

    def __eq__(self, other):
        if isinstance(other, self.__class__):
            return self.to_dict() == other.to_dict()
        return NotImplemented

    def __repr__(self):
        return "<ExperimentSpec {} ({})>".format(self.kind, self.output_dir)

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.params.to_dict(),
            "noise": copy.deepcopy(self.noise_config),
            "run": self.run.to_dict(),
            "options": copy.deepcopy(self.options),
            "output_dir": self.output_dir,
        }


class RunManifest(object):
    """What was run, with what, and what came out of it.

    The embedded spec snapshot is enough to re-run the experiment.
    """

    def __init__(self, spec):
        self.spec = spec.to_dict()
        self.params = spec.params.to_dict()
        self.derived = {"A": spec.params.A, "B": spec.params.B}
        self.seed = spec.run.seed
        self.version = __version__
        self.start_time = None
        self.stop_time = None
        self.wall_clock = None
        self.exit_code = None
        self.artifacts = []
        self.summary = {}
        self._start = None

    def __repr__(self):
        return "<RunManifest {} seed={}>".format(self.spec["kind"], self.seed)

    def start(self):
        self.start_time = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self._start = time.monotonic()

    def stop(self, exit_code):
        self.stop_time = datetime.datetime.now(datetime.timezone.utc).isoformat()
        if self._start is not None:
            self.wall_clock = time.monotonic() - self._start
        self.exit_code = exit_code

    def to_dict(self):
        return {
            "manifest_version": 1,
            "tool_version": self.version,
            "spec": self.spec,
            "params": self.params,
            "derived": self.derived,
            "seed": self.seed,
            "start_time": self.start_time,
            "stop_time": self.stop_time,
            "wall_clock": self.wall_clock,
            "exit_code": self.exit_code,
            "artifacts": sorted(self.artifacts),
            "summary": self.summary,
        }
