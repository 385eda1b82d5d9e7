"""Headerless CSV matrices, JSON reports and run manifests."""
from __future__ import annotations

import json
import os
import platform
from typing import Iterable, Optional

import numpy as np
import scipy

from .datagen import FunctionalDataset
from .numerics import Grid

FLOAT_FMT = "%.17g"  # round-trips float64 exactly


def read_matrix(path: str) -> np.ndarray:
    a = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{path}: non-finite values")
    return a


def read_vector(path: str) -> np.ndarray:
    a = read_matrix(path)
    if a.shape[1] != 1 and a.shape[0] != 1:
        raise ValueError(f"{path}: expected one value per line")
    return a.ravel()


def read_grid(path: str) -> Grid:
    pts = read_matrix(path)
    return Grid(pts[:, 0] if pts.shape[1] == 1 else pts)


def read_indices(path: str) -> list:
    """1-based indices on disk, 0-based in memory."""
    if os.path.getsize(path) == 0:
        return []
    return [int(round(v)) - 1 for v in read_vector(path)]


def write_matrix(path: str, a) -> None:
    a = np.asarray(a, dtype=float)
    np.savetxt(path, a.reshape(a.shape[0], -1) if a.ndim > 1 else a[:, None],
               delimiter=",", fmt=FLOAT_FMT)


def write_vector(path: str, v) -> None:
    np.savetxt(path, np.asarray(v, dtype=float).ravel(), fmt=FLOAT_FMT)


def write_indices(path: str, idx: Iterable[int]) -> None:
    with open(path, "w") as fh:
        for i in idx:
            fh.write(f"{int(i) + 1}\n")


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_dataset(outdir: str, ds: FunctionalDataset) -> list:
    os.makedirs(outdir, exist_ok=True)
    files = ["X.csv", "Z.csv", "Y.csv", "grid.csv"]
    write_matrix(os.path.join(outdir, "X.csv"), ds.X)
    write_matrix(os.path.join(outdir, "Z.csv"), ds.Z)
    write_vector(os.path.join(outdir, "Y.csv"), ds.Y)
    pts = ds.grid.points
    write_matrix(os.path.join(outdir, "grid.csv"), pts if pts.ndim == 2 else pts[:, None])
    if ds.truth is not None:
        write_json(os.path.join(outdir, "truth.json"), ds.truth.to_json())
        files.append("truth.json")
    return files


def read_dataset(datadir: str) -> FunctionalDataset:
    def f(name):
        return os.path.join(datadir, name)

    return FunctionalDataset(read_matrix(f("X.csv")), read_matrix(f("Z.csv")),
                             read_vector(f("Y.csv")), read_grid(f("grid.csv")))


def versions() -> dict:
    from . import __version__

    return {"flsem": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(outdir: str, command: str, seed: Optional[int], config: dict,
                   config_hash: str, outputs: list, stages: Optional[dict] = None) -> str:
    """Record the run; ``stages`` maps a pipeline stage to the files it wrote."""
    path = os.path.join(outdir, "manifest.json")
    doc = {"command": command, "seed": seed, "config_hash": config_hash,
           "config": config, "versions": versions(), "outputs": outputs}
    if stages is not None:
        # a list keeps execution order through the sorted-key JSON writer
        doc["stages"] = [{"stage": k, "outputs": v} for k, v in stages.items()]
    write_json(path, doc)
    return path
