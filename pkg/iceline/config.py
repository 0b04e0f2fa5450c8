#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

import copy
import json
import types

import iceline
from iceline import utils
from iceline.model import InitialField, ModelDomainError, ModelParamsError, NoiseSpec, PARAM_FIELDS

try:
    import yaml
except ImportError as e:
    yaml = e

NUMBER = (int, float)
OPTIONAL_NUMBER = (int, float, type(None))
MAX_SEED = 2 ** 64


class ConfigError(RuntimeError):
    pass


def load_config(*paths):
    """Load experiment configs (or a run manifest) into an ExperimentSpec.

    Later files are merged over earlier ones, so a base config can be
    refined by a small override file.
    """
    if not paths:
        raise ConfigError("no config file given")
    loader = ConfigLoader()
    config = {}
    for path in paths:
        doc = loader.load_file(path)
        if isinstance(doc, dict) and "manifest_version" in doc:
            if "spec" not in doc:
                raise ConfigError("{}: manifest has no spec snapshot".format(path))
            doc = doc["spec"]
        if not isinstance(doc, dict):
            raise ConfigError("{}: config must be a mapping".format(path))
        config = utils.dict_merge(config, doc)
    loader.load(config)
    return loader.spec


def _number_list(v):
    if not all(type(x) in NUMBER for x in v):
        raise ValueError("expected a list of numbers, got {}".format(v))
    return [float(x) for x in v]


def _seed(v):
    if not 0 <= v < MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _optional_float(v):
    return None if v is None else float(v)


class ConfigLoader:
    def __init__(self, spec=None):
        self.spec = spec

    def load_file(self, file):
        """Parse JSON or YAML, reporting the line and column of syntax errors."""
        file_type = utils.file_type_for(file)
        try:
            return utils.load_structured_file(file, file_type=file_type)
        except OSError as e:
            raise ConfigError("{}: {}".format(file, e.strerror))
        except ImportError as e:
            raise ConfigError("{}: {}".format(file, e))
        except json.JSONDecodeError as e:
            raise ConfigError(
                "{}: line {} column {}: {}".format(file, e.lineno, e.colno, e.msg)
            )
        except Exception as e:
            mark = getattr(e, "problem_mark", None)
            if isinstance(yaml, ImportError) or not isinstance(e, yaml.YAMLError):
                raise
            if mark is not None:
                raise ConfigError(
                    "{}: line {} column {}: {}".format(
                        file, mark.line + 1, mark.column + 1, getattr(e, "problem", e)
                    )
                )
            raise ConfigError("{}: {}".format(file, e))

    def populate_object(self, obj, level, source, valid_values, value_transforms):
        for k, v in source.items():
            if k not in valid_values:
                raise ConfigError("{}: {}: Unknown field".format(level, k))
            if type(v) not in valid_values[k]:
                raise ConfigError(
                    "{}: {}: Invalid value {} (expected {})".format(
                        level, k, repr(type(v)), repr(valid_values[k])
                    )
                )
            if k in value_transforms:
                try:
                    v = value_transforms[k](v)
                except Exception as e:
                    raise ConfigError(
                        "{}: {}: Invalid value during transformation: {}".format(
                            level, k, str(e)
                        )
                    )
            setattr(obj, k, v)

    def build_params(self, config):
        overrides = types.SimpleNamespace()
        valid_values = {k: NUMBER for k in PARAM_FIELDS}
        value_transforms = {k: float for k in PARAM_FIELDS}
        self.populate_object(
            overrides, "params", config.get("params", {}), valid_values, value_transforms
        )
        try:
            self.spec.params = self.spec.params.replace(**vars(overrides))
        except ModelParamsError as e:
            raise ConfigError("params: {}".format(e))

    def build_noise(self, config):
        noise = types.SimpleNamespace(**self.spec.noise_config)
        valid_values = {
            "field": (str,),
            "field_scale": NUMBER,
            "iceline": (str,),
            "iceline_scale": NUMBER,
        }
        value_transforms = {"field_scale": float, "iceline_scale": float}
        self.populate_object(noise, "noise", config.get("noise", {}), valid_values, value_transforms)
        try:
            NoiseSpec.from_names(**vars(noise))
        except ModelDomainError as e:
            raise ConfigError("noise: {}".format(e))
        self.spec.noise_config = vars(noise)

    def build_run(self, config):
        run = types.SimpleNamespace()
        valid_values = {
            "epsilon": NUMBER,
            "T": NUMBER,
            "dt": OPTIONAL_NUMBER,
            "n_lat": (int,),
            "n_paths": (int,),
            "seed": (int,),
            "eta0": NUMBER,
            "X0": NUMBER + (dict,),
            "record_stride": (int,),
            "workers": (int,),
        }
        value_transforms = {
            "epsilon": float,
            "T": float,
            "dt": _optional_float,
            "seed": _seed,
            "eta0": float,
            "X0": InitialField.coerce,
        }
        self.populate_object(run, "run", config.get("run", {}), valid_values, value_transforms)
        self.spec.run = self.spec.run.replace(**vars(run))

    def build_options(self, config):
        valid_values = {
            "n_grid": (int,),
            "quadrature_order": (int,),
            "delta": NUMBER,
            "q_values": (list,),
            "etas": (list,),
            "epsilons": (list,),
            "threshold": NUMBER,
            "horizons": (list,),
            "snapshot_stride": (int,),
            "mfpt_from": OPTIONAL_NUMBER,
            "mfpt_to": OPTIONAL_NUMBER,
            "reflect_at": OPTIONAL_NUMBER,
            "mc_paths": (int,),
            "mc_dt": NUMBER,
            "weak_levels": (int,),
            "weak_dt": NUMBER,
            "kappa_prime": OPTIONAL_NUMBER,
            "mu_sup": NUMBER,
        }
        value_transforms = {
            "delta": float,
            "q_values": _number_list,
            "etas": _number_list,
            "epsilons": _number_list,
            "threshold": float,
            "horizons": _number_list,
            "mfpt_from": _optional_float,
            "mfpt_to": _optional_float,
            "reflect_at": _optional_float,
            "mc_dt": float,
            "weak_dt": float,
            "kappa_prime": _optional_float,
            "mu_sup": float,
        }
        options = types.SimpleNamespace(**self.spec.options)
        self.populate_object(options, "options", config.get("options", {}), valid_values, value_transforms)
        self.spec.options = vars(options)

    def load(self, config):
        if not isinstance(config, dict):
            raise ConfigError("config must be a mapping (got {})".format(type(config).__name__))
        if "manifest_version" in config:
            if "spec" not in config:
                raise ConfigError("manifest has no spec snapshot")
            config = config["spec"]
        unknown = set(config) - {"kind", "params", "noise", "run", "options", "output_dir"}
        if unknown:
            raise ConfigError("Unknown field(s): {}".format(", ".join(sorted(unknown))))
        kind = config.get("kind")
        if kind not in iceline.KINDS:
            raise ConfigError(
                "kind: {} is not one of {}".format(repr(kind), ", ".join(iceline.KINDS))
            )
        for section in ("params", "noise", "run", "options"):
            if type(config.get(section, {})) is not dict:
                raise ConfigError("{}: expected a mapping".format(section))
        self.spec = iceline.ExperimentSpec(kind)
        self.spec.raw_config = copy.deepcopy(config)
        self.build_params(config)
        self.build_noise(config)
        self.build_run(config)
        self.build_options(config)
        if "output_dir" in config:
            if type(config["output_dir"]) is not str:
                raise ConfigError("output_dir: expected a string")
            self.spec.output_dir = config["output_dir"]
        return self.spec


def write_config(spec, filename):
    utils.write_json_file(filename, spec.to_dict())
