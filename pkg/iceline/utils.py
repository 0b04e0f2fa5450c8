#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

import copy
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

try:
    import yaml
except ImportError as e:
    yaml = e


def dict_merge(s, m):
    """Recursively merge one dict into another."""
    if not isinstance(m, dict):
        return m
    out = copy.deepcopy(s)
    for k, v in m.items():
        if k in out and isinstance(out[k], dict):
            out[k] = dict_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def file_type_for(file):
    if file.endswith((".yaml", ".yml")):
        return "yaml"
    return "json"


def load_structured_file(file, file_type=None):
    if file_type is None:
        file_type = file_type_for(file)
    if file_type == "yaml" and isinstance(yaml, ImportError):
        raise ImportError("yaml not available")
    with open(file) as f:
        try:
            if file_type == "yaml":
                return yaml.safe_load(f)
            else:
                return json.load(f)
        except ValueError as e:
            e.args += (file,)
            raise


def json_pretty_print(v):
    return json.dumps(v, sort_keys=True, indent=4, separators=(",", ": "))


def write_json_file(filename, v):
    with open(filename, "w") as f:
        f.write(json_pretty_print(jsonable(v)))
        f.write("\n")


def jsonable(v):
    """Convert numpy containers and scalars into plain JSON types.

    Non-finite floats become None so no NaN/inf reaches an artifact.
    """
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def format_float(v):
    return repr(float(v))


def write_csv_file(filename, columns, rows):
    """Write rows of numbers under the given header.

    Floats are written with repr() so a reload reproduces them exactly.
    Non-finite values are refused.
    """
    with open(filename, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            out = []
            for v in row:
                if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                    out.append(str(int(v)))
                    continue
                if not math.isfinite(float(v)):
                    raise ValueError(
                        "{}: non-finite value {} in row {}".format(filename, v, row)
                    )
                out.append(format_float(v))
            writer.writerow(out)


def read_csv_file(filename):
    with open(filename, newline="") as f:
        reader = csv.reader(f)
        columns = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return columns, rows


def ensure_dir(dir):
    if not os.path.exists(dir):
        os.makedirs(dir)
    return dir


def path_seed_sequence(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def path_streams(seed, index):
    """Return the (field, iceline) generators owned by one ensemble member.

    The field stream drives the Brownian motions B^j of the temperature
    field, the iceline stream drives W. Both depend only on (seed, index),
    so a path is reproducible regardless of how the ensemble is chunked,
    and an averaged path with the same (seed, index) sees the same W.
    """
    field_ss, iceline_ss = path_seed_sequence(seed, index).spawn(2)
    return np.random.default_rng(field_ss), np.random.default_rng(iceline_ss)


def chunk_ranges(n, chunk_size):
    return [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]


def standard_error(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        return float("nan")
    return float(np.std(samples, ddof=1) / math.sqrt(samples.size))


def map_chunks(func, tasks, workers=1):
    """Apply func to every task, in order, optionally on a process pool.

    Results do not depend on workers: every chunk carries its own path
    indices and draws from per-path streams.
    """
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as executor:
        return list(executor.map(func, tasks))
