"""Identifiability of the exposure effect under possibly invalid instruments.

The reduced form is ``Gamma = beta + Cmat @ b`` with ``L`` instruments, ``R``
loadings and at most ``U - 1`` invalid instruments (nonzero ``beta``).  Every
subset of ``L - U + 1`` instruments that contains only valid ones solves
``Cmat_S b = Gamma_S`` exactly; the effect is identified when all exactly
consistent, full-rank subsets agree on ``b``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

MAX_SUBSETS = 10**6


class GuardExceeded(RuntimeError):
    """Raised when the subset enumeration would exceed ``MAX_SUBSETS``."""


@dataclass
class IvProblem:
    gamma: np.ndarray
    cmat: np.ndarray
    U: int
    rank_tol: float = 1e-8

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        cmat = np.asarray(self.cmat, dtype=float)
        if cmat.ndim == 1:
            cmat = cmat[:, None]
        self.cmat = cmat
        L, R = cmat.shape
        if len(self.gamma) != L:
            raise ValueError("gamma and loadings must have the same number of rows")
        if R < 1:
            raise ValueError("need at least one loading column")
        if int(self.U) != self.U or self.U < 1:
            raise ValueError("U must be a positive integer")
        if self.subset_size < R:
            raise ValueError(f"subset size L-U+1={self.subset_size} is below R={R}")
        if not self.rank_tol > 0:
            raise ValueError("rank_tol must be positive")

    @property
    def L(self) -> int:
        return self.cmat.shape[0]

    @property
    def R(self) -> int:
        return self.cmat.shape[1]

    @property
    def subset_size(self) -> int:
        return self.L - int(self.U) + 1


@dataclass
class IvReport:
    identifiable: bool
    b: np.ndarray | None
    beta: np.ndarray | None
    consistent_subsets: list = field(default_factory=list)  # [(subset, b)]
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "identifiable": self.identifiable,
            "b": None if self.b is None else self.b.tolist(),
            "beta": None if self.beta is None else self.beta.tolist(),
            "consistent_subsets": [
                {"subset": [i + 1 for i in s], "b": sol.tolist()}
                for s, sol in self.consistent_subsets
            ],
            "reason": self.reason,
        }


def _solve_subset(cmat_s: np.ndarray, gamma_s: np.ndarray, tol: float):
    """Return ``b`` if the subset system is full rank and exactly consistent."""
    sv = np.linalg.svd(cmat_s, compute_uv=False)
    if sv[-1] < tol * sv[0] or sv[0] == 0:
        return None
    b = np.linalg.lstsq(cmat_s, gamma_s, rcond=None)[0]
    resid = np.linalg.norm(cmat_s @ b - gamma_s)
    if resid > tol * (1.0 + np.linalg.norm(gamma_s)):
        return None
    return b


def check_identifiability(prob: IvProblem) -> IvReport:
    L, size, tol = prob.L, prob.subset_size, prob.rank_tol
    count = math.comb(L, size)
    if count > MAX_SUBSETS:
        raise GuardExceeded(f"{count} subsets exceed the enumeration guard of {MAX_SUBSETS}")
    found = []
    for subset in itertools.combinations(range(L), size):
        idx = list(subset)
        b = _solve_subset(prob.cmat[idx], prob.gamma[idx], tol)
        if b is not None:
            found.append((subset, b))
    if not found:
        return IvReport(False, None, None, [], "no consistent full-rank subset")
    b0 = found[0][1]
    for subset, b in found[1:]:
        if np.any(np.abs(b - b0) > tol * (1.0 + np.abs(b0))):
            return IvReport(False, None, None, found,
                            f"subsets {[i + 1 for i in found[0][0]]} and "
                            f"{[i + 1 for i in subset]} give different solutions")
    b = np.mean([sol for _, sol in found], axis=0)
    beta = prob.gamma - prob.cmat @ b
    beta[np.abs(beta) <= tol * (1.0 + np.abs(prob.gamma))] = 0.0
    return IvReport(True, b, beta, found, f"{len(found)} consistent subsets agree")


def corollary_max_invalid(L: int, R: int) -> int:
    """Largest admissible invalidity budget, ``floor((L - R + 1) / 2)``."""
    if R < 1 or L < R:
        raise ValueError("need L >= R >= 1")
    return (L - R + 1) // 2
