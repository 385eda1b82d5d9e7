"""Marginal screening for the outcome and the functional exposure."""
from __future__ import annotations

import math
from typing import Iterable, Optional

import numpy as np

from .numerics import make_rng

DCOR_MAX_N = 5000


def default_k(n: int) -> int:
    """``floor(n / log n)`` survivors per channel."""
    return max(1, int(math.floor(n / math.log(n)))) if n > 1 else 1


def _standardize(a: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=0)
    sd = np.sqrt(np.mean(a * a, axis=0))
    out = np.zeros_like(a)
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(a).max(axis=0))
    out[:, ok] = a[:, ok] / sd[ok]
    return out


def _rank_desc(scores: np.ndarray, k: int) -> list:
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order[:k]]


def marginal_correlations(Y, X) -> np.ndarray:
    """``|corr(Y, X_l)|`` per column; constant columns (or constant Y) score 0."""
    Y = np.asarray(Y, dtype=float).reshape(-1, 1)
    X = np.asarray(X, dtype=float)
    ys = _standardize(Y)[:, 0]
    xs = _standardize(X)
    return np.abs(xs.T @ ys) / X.shape[0]


def sis_rank(Y, X, k: int) -> list:
    """Indices of the ``k`` largest absolute marginal correlations, best first."""
    p = np.shape(X)[1]
    if not 0 <= k <= p:
        raise ValueError(f"k={k} outside [0, {p}]")
    return _rank_desc(marginal_correlations(Y, X), k)


def _centered_distances(a: np.ndarray) -> np.ndarray:
    if a.ndim == 1:
        d = np.abs(a[:, None] - a[None, :])
    else:
        sq = np.sum(a * a, axis=1)
        d = np.sqrt(np.clip(sq[:, None] + sq[None, :] - 2.0 * (a @ a.T), 0.0, None))
    return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()


def dcor(u, v) -> float:
    """Squared-distance-covariance based distance correlation in [0, 1].

    ``dcor = dCov(u, v) / sqrt(dCov(u, u) dCov(v, v))`` with double-centred
    Euclidean distance matrices.  A zero-variance argument gives 0.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = u.shape[0]
    if n < 4 or v.shape[0] != n:
        raise ValueError("dcor needs at least 4 paired observations")
    A = _centered_distances(u)
    B = _centered_distances(v)
    return _dcor_from_centered(A, B)


def _dcor_from_centered(A: np.ndarray, B: np.ndarray) -> float:
    vab = float(np.mean(A * B))
    vaa = float(np.mean(A * A))
    vbb = float(np.mean(B * B))
    if vaa <= 1e-300 or vbb <= 1e-300:
        return 0.0
    return float(np.sqrt(np.clip(vab / np.sqrt(vaa * vbb), 0.0, 1.0)))


def _subsample(n: int, seed: int) -> Optional[np.ndarray]:
    if n <= DCOR_MAX_N:
        return None
    return np.sort(make_rng(seed).choice(n, DCOR_MAX_N, replace=False))


def dcor_scores(Z, X, seed: int = 0) -> np.ndarray:
    """``dcor(X_l, Z rows)`` for every column; rows subsampled above 5000."""
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    rows = _subsample(Z.shape[0], seed)
    if rows is not None:
        Z, X = Z[rows], X[rows]
    if Z.shape[0] < 4:
        raise ValueError("dcor needs at least 4 paired observations")
    B = _centered_distances(Z)
    return np.array([_dcor_from_centered(_centered_distances(X[:, j]), B)
                     for j in range(X.shape[1])])


def dcor_screen_functional(Z, X, k: int, seed: int = 0) -> list:
    p = np.shape(X)[1]
    if not 0 <= k <= p:
        raise ValueError(f"k={k} outside [0, {p}]")
    return _rank_desc(dcor_scores(Z, X, seed), k)


def union_screen(idx_y: Iterable[int], idx_z: Iterable[int]) -> list:
    return sorted(set(int(i) for i in idx_y) | set(int(i) for i in idx_z))
