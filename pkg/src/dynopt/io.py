"""CSV and run-manifest output with reproducible formatting."""

from __future__ import annotations

import json
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST_SCHEMA = 1
OUTPUT_ENV = "DYNOPT_OUTPUT_DIR"


def fmt(x) -> str:
    """17 significant digits, so every float64 round-trips exactly."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    return header, data.reshape(-1, len(header))


def output_dir(arg=None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "dynopt-out")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_manifest(path, command: str, argv, params: dict, seed, results: dict, artifacts) -> Path:
    """Everything needed to rerun: the argument vector, resolved parameters,
    seed, package versions and the reported residuals.  No timestamps."""
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "command": command,
        "argv": list(argv),
        "params": params,
        "seed": seed,
        "versions": {"dynopt": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "results": results,
        "artifacts": sorted(str(a) for a in artifacts),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path
