"""Nullity test for the functional effect ``H0: B == 0``.

The statistic is a quadratic form of the projected outcome,

    S_n = (M Y)' W (M Y) / (n sigma2),   W = weight^2 * Zhat @ gram @ Zhat',

calibrated by a scaled chi-square ``kappa * chi2_zeta`` whose first two
moments match those of the weighted chi-square limit.  Both moments only
need ``tr(R)`` and ``tr(R^2)``, so no eigen-decomposition is performed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .numerics import Grid, chi2_upper_tail, operator_sqrt
from .outcome import projection_complement

DEGENERATE_TRACE = 1e-12


@dataclass
class TestResult:
    __test__ = False  # keep pytest from collecting this as a test class

    S_n: float
    zeta: float
    kappa: float
    sigma2: float
    p_value: float
    tr_Rn: float
    tr_Rn2: float
    degenerate: bool = False

    def reject(self, level: float = 0.05) -> bool:
        return (not self.degenerate) and self.p_value < level

    def to_dict(self) -> dict:
        return asdict(self)


def weight_matrix(Zhat: np.ndarray, gram: np.ndarray, weight: float) -> np.ndarray:
    """``W = weight^2 Zhat gram Zhat'`` (n x n), the double integral of the kernel."""
    W = weight**2 * (Zhat @ gram @ Zhat.T)
    return 0.5 * (W + W.T)


def build_Rn(Zhat, active, X, gram, grid: Grid) -> np.ndarray:
    """Tilde matrix ``Kt^{1/2} (weight Zhat' M Zhat / n) Kt^{1/2}``, ``Kt = weight * gram``."""
    Zhat = np.asarray(Zhat, dtype=float)
    n = Zhat.shape[0]
    M = projection_complement(np.asarray(X)[:, list(active)])
    root = operator_sqrt(grid.weight * gram)
    inner = grid.weight * (Zhat.T @ M(Zhat)) / n
    R = root @ inner @ root
    return 0.5 * (R + R.T)


def rn_traces(Zhat, active, X, gram, grid: Grid) -> tuple:
    """``(tr R, tr R^2)`` computed from the n x n side without square roots.

    ``R`` shares its nonzero spectrum with ``M W M / n``, so the trace is a
    diagonal sum and the squared trace is a squared Frobenius norm.
    """
    n = Zhat.shape[0]
    M = projection_complement(np.asarray(X)[:, list(active)])
    W = weight_matrix(Zhat, gram, grid.weight)
    MWM = M(M(W).T) / n
    return float(np.trace(MWM)), float(np.sum(MWM * MWM))


def test_statistic(Y, X, active, Zhat, gram, grid: Grid, sigma2: float) -> float:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    Y = np.asarray(Y, dtype=float)
    n = len(Y)
    My = projection_complement(np.asarray(X)[:, list(active)])(Y)
    Wy = grid.weight * (np.asarray(Zhat).T @ My)  # int Zhat(t) (MY) dt on the grid
    return float(max(Wy @ gram @ Wy, 0.0) / (n * sigma2))


test_statistic.__test__ = False  # library function, not a pytest test


def welch_satterthwaite(tr_R: float, tr_R2: float) -> tuple:
    """``(zeta, kappa)`` with ``kappa * zeta = tr R`` and ``kappa^2 * zeta = tr R^2``."""
    if tr_R <= DEGENERATE_TRACE or tr_R2 <= 0:
        raise ValueError("degenerate operator: trace is zero")
    return tr_R**2 / tr_R2, tr_R2 / tr_R


def welch_satterthwaite_from_matrix(R: np.ndarray) -> tuple:
    return welch_satterthwaite(float(np.trace(R)), float(np.sum(R * R)))


def null_pvalue(S_n: float, zeta: float, kappa: float) -> float:
    return chi2_upper_tail(S_n / kappa, zeta)


def nullity_test(Y, X, active, Zhat, gram, grid: Grid, sigma2: float) -> TestResult:
    """Full test: statistic, moment matching and p-value.

    A zero operator (e.g. ``Zhat == 0``) yields a flagged degenerate result
    with ``p = 1``.
    """
    tr_R, tr_R2 = rn_traces(np.asarray(Zhat, dtype=float), active, X, gram, grid)
    S = test_statistic(Y, X, active, Zhat, gram, grid, sigma2)
    if tr_R <= DEGENERATE_TRACE:
        return TestResult(S, float("nan"), float("nan"), sigma2, 1.0, tr_R, tr_R2, True)
    zeta, kappa = welch_satterthwaite(tr_R, tr_R2)
    return TestResult(S, zeta, kappa, sigma2, null_pvalue(S, zeta, kappa), tr_R, tr_R2)


def null_sigma2(Y, X, active) -> float:
    """Residual variance of the scalar-only fit on ``active`` (the null model)."""
    Y = np.asarray(Y, dtype=float)
    r = projection_complement(np.asarray(X)[:, list(active)])(Y)
    return float(r @ r) / max(len(Y) - len(active), 1)


def test_from_fit(Y, X, Zhat, fit, gram, grid: Grid, sigma2_source: str = "full",
                  sigma2: Optional[float] = None) -> TestResult:
    """Run the nullity test on an outcome fit's support and variance.

    ``sigma2_source`` is ``"full"`` (residuals of the fitted model) or
    ``"null"`` (residuals of the scalar-only model on the same support).
    """
    if sigma2 is None:
        if sigma2_source == "full":
            sigma2 = fit.sigma2
        elif sigma2_source == "null":
            sigma2 = null_sigma2(Y, X, fit.active_set)
        else:
            raise ValueError(f"unknown sigma2 source {sigma2_source!r}")
    return nullity_test(Y, X, fit.active_set, Zhat, gram, grid, sigma2)


test_from_fit.__test__ = False
