"""Accuracy and selection metrics, plus Monte Carlo aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np


def selection_errors(true_set: Iterable[int], est_set: Iterable[int]) -> tuple:
    """``(FZ, FN)``: false zeros ``|true - est|`` and false nonzeros ``|est - true|``."""
    t, e = set(true_set), set(est_set)
    return len(t - e), len(e - t)


def mse_beta(beta_hat, beta) -> float:
    d = np.asarray(beta_hat, dtype=float) - np.asarray(beta, dtype=float)
    return float(d @ d)


def mse_function(f_hat, f, weight: float) -> float:
    """Rectangle-rule squared L2 distance on the grid."""
    d = np.asarray(f_hat, dtype=float) - np.asarray(f, dtype=float)
    return float(weight * np.sum(d * d))


mse_B = mse_function


def pmse_outcome(fit, X, Z, Y, weight: float) -> float:
    """Mean squared error of ``X beta + int Z B`` on held-out subjects."""
    r = np.asarray(Y) - fit.predict(X, Z, weight)
    return float(np.mean(r * r))


def pmse_exposure(values, X, Z, weight: float) -> float:
    """Per-subject integrated squared error of ``X C`` against ``Z``, averaged."""
    r = np.asarray(Z) - np.asarray(X) @ values
    return float(np.mean(weight * np.sum(r * r, axis=1)))


@dataclass
class Aggregate:
    mean: float
    sd: float
    n: int
    sd_defined: bool = True


def mc_aggregate(results: Sequence[Mapping[str, float]]) -> dict:
    """Per-metric mean and sample standard deviation (``ddof=1``).

    A single replicate has no sample sd; it is reported as 0 with
    ``sd_defined=False``.
    """
    if not results:
        raise ValueError("no replicate results")
    keys = list(results[0])
    out = {}
    for k in keys:
        vals = np.array([float(r[k]) for r in results])
        vals = vals[~np.isnan(vals)]
        if len(vals) == 0:
            out[k] = Aggregate(float("nan"), float("nan"), 0, False)
        elif len(vals) == 1:
            out[k] = Aggregate(float(vals[0]), 0.0, 1, False)
        else:
            # fsum keeps the result independent of replicate order
            mean = math.fsum(vals) / len(vals)
            sd = math.sqrt(math.fsum((vals - mean) ** 2) / (len(vals) - 1))
            out[k] = Aggregate(mean, sd, len(vals))
    return out
