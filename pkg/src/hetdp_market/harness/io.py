"""CSV / JSON readers and writers used by the command line and the experiments."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform

import numpy as np

from ..core_types import HyperParams, InvalidData, SensitivityProfile, normalize_dataset
from ..sensitivity import from_dict

LABEL_COLUMN = "label"


def read_dataset(path):
    """Feature CSV with a header row; the column named ``label`` holds the labels."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidData(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    if LABEL_COLUMN not in header:
        raise InvalidData(f"{path}: no '{LABEL_COLUMN}' column")
    j = header.index(LABEL_COLUMN)
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InvalidData(f"{path}: {exc}") from None
    if body.shape[1] != len(header):
        raise InvalidData(f"{path}: ragged rows")
    X = np.delete(body, j, axis=1)
    return normalize_dataset(X, body[:, j])


def write_dataset(path, D):
    header = [f"x{i}" for i in range(D.n)] + [LABEL_COLUMN]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for x, y in zip(D.features, D.labels):
            wr.writerow([repr(float(v)) for v in x] + [int(y)])


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def read_params(path_or_dict):
    d = path_or_dict if isinstance(path_or_dict, dict) else read_json(path_or_dict)
    fields = HyperParams.__dataclass_fields__
    unknown = set(d) - set(fields)
    if unknown:
        raise InvalidData(f"unknown hyperparameters {sorted(unknown)}")
    return HyperParams(**{k: float(v) for k, v in d.items()})


def read_dist(path_or_dict):
    return from_dict(path_or_dict if isinstance(path_or_dict, dict) else read_json(path_or_dict))


def read_column(path):
    """Single-column CSV (header optional) of sensitivities."""
    vals = []
    with open(path, newline="") as fh:
        for r in csv.reader(fh):
            if not r or not r[0].strip():
                continue
            try:
                vals.append(float(r[0]))
            except ValueError:
                if vals:
                    raise InvalidData(f"{path}: bad value {r[0]!r}") from None
    return SensitivityProfile(np.array(vals))


def read_sensitivities(path, m=None, rng=None):
    """A CSV column of reported sensitivities, or a distribution JSON to draw ``m`` from.

    Returns (profile, dist); dist is None for a CSV input.
    """
    if path.lower().endswith(".json"):
        dist = read_dist(path)
        if m is None or rng is None:
            raise InvalidData("drawing sensitivities from a distribution needs m and a seed")
        return SensitivityProfile(dist.sample(m, rng)), dist
    return read_column(path), None


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else (None if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_table(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def config_hash(cfg):
    blob = json.dumps(_clean(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def manifest(cfg, seed):
    import scipy

    from .. import _kernels

    return {
        "seed": int(seed),
        "config_hash": config_hash(cfg),
        "config": _clean(cfg),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernels": _kernels.BACKEND,
        },
    }
