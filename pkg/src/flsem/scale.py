"""Divide-and-conquer fitting over subject blocks and domain windows.

Local fits run on every (block, window) pair.  Per window the coefficient
functions are averaged over blocks, with an unselected covariate counting as
a zero function.  The fitted exposure at a grid point covered by several
windows is the plain mean of the covering windows' reconstructions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .exposure import ExposureFit, fgsdar_fit
from .numerics import Grid, KernelSpec, gram_matrix
from .outcome import OutcomeFit, outcome_fit, outcome_loss, select_sparsity


@dataclass
class WindowPlan:
    windows: list  # index arrays into the grid
    width: tuple
    stride: tuple

    def __post_init__(self):
        if not self.windows or any(len(w) == 0 for w in self.windows):
            raise ValueError("every window must be nonempty")

    def coverage(self, m: int) -> np.ndarray:
        """Number of windows covering each grid index."""
        count = np.zeros(m, dtype=int)
        for w in self.windows:
            count[w] += 1
        return count


@dataclass
class PartitionPlan:
    n: int
    n_blocks: int
    blocks: list = field(init=False)

    def __post_init__(self):
        if self.n_blocks < 1 or self.n_blocks > self.n:
            raise ValueError("need 1 <= blocks <= n")
        size = self.n // self.n_blocks
        starts = [b * size for b in range(self.n_blocks)] + [self.n]
        self.blocks = [np.arange(starts[b], starts[b + 1]) for b in range(self.n_blocks)]


def _axis_intervals(low: float, high: float, width: float, stride: float) -> list:
    span = high - low
    if not 0 < width:
        raise ValueError("window width must be positive")
    if not 0 < stride <= width:
        raise ValueError("window stride must lie in (0, width]")
    tol = 1e-12 * max(1.0, abs(span))
    out = []
    k = 0
    while True:
        start = low + k * stride
        stop = min(start + width, high)
        out.append((start, stop))
        if start + width >= high - tol:
            return out
        k += 1


def make_windows(grid: Grid, width: Union[float, Sequence[float]],
                 stride: Union[float, Sequence[float]]) -> WindowPlan:
    """Sliding windows ``[low + k stride, low + k stride + width]`` per axis.

    Windows are generated until one reaches the upper end of the domain.  On
    2-D grids a scalar width/stride applies to both axes and the windows are
    all products of the per-axis intervals.
    """
    bounds = grid.bounds
    d = grid.ndim
    widths = tuple(np.broadcast_to(np.asarray(width, dtype=float), (d,)))
    strides = tuple(np.broadcast_to(np.asarray(stride, dtype=float), (d,)))
    for a in range(d):
        if widths[a] > bounds[a, 1] - bounds[a, 0] + 1e-12:
            raise ValueError("window width exceeds the domain")
    pts = grid.points.reshape(grid.m, d)
    per_axis = [_axis_intervals(bounds[a, 0], bounds[a, 1], widths[a], strides[a])
                for a in range(d)]
    tol = 1e-12
    windows = []
    for combo in np.ndindex(*[len(iv) for iv in per_axis]):
        mask = np.ones(grid.m, dtype=bool)
        for a, k in enumerate(combo):
            lo, hi = per_axis[a][k]
            mask &= (pts[:, a] >= lo - tol) & (pts[:, a] <= hi + tol)
        idx = np.flatnonzero(mask)
        if len(idx):
            windows.append(idx)
    return WindowPlan(windows, widths, strides)


def full_window(grid: Grid) -> WindowPlan:
    return WindowPlan([np.arange(grid.m)], tuple([np.inf] * grid.ndim), tuple([np.inf] * grid.ndim))


@dataclass
class DcExposureResult:
    values: np.ndarray  # p x m averaged coefficient functions on the grid
    zhat: np.ndarray
    active_set: tuple
    local_fits: list  # [(window index, block index, ExposureFit)]


def dc_exposure_fit(X, Z, grid: Grid, kernel: KernelSpec, J: int,
                    lambda_k: Union[float, str], part: PartitionPlan, plan: WindowPlan,
                    max_iter: int = 50) -> DcExposureResult:
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, p = X.shape
    if part.n != n:
        raise ValueError("partition size does not match the data")
    if min(len(b) for b in part.blocks) < J + 1:
        raise ValueError(f"every block needs at least J+1={J + 1} subjects")
    zsum = np.zeros((n, grid.m))
    vsum = np.zeros((p, grid.m))
    count = np.zeros(grid.m)
    local = []
    for k, idx in enumerate(plan.windows):
        sub = grid.subgrid(idx)
        gram = gram_matrix(kernel, sub)
        fits = []
        for z, rows in enumerate(part.blocks):
            fit = fgsdar_fit(X[rows], Z[np.ix_(rows, idx)], sub, kernel, J, lambda_k,
                             max_iter=max_iter, gram=gram)
            fits.append(fit)
            local.append((k, z, fit))
        vbar = np.mean([f.values for f in fits], axis=0)
        zsum[:, idx] += X @ vbar
        vsum[:, idx] += vbar
        count[idx] += 1
    if np.any(count == 0):
        raise ValueError("window plan leaves grid points uncovered")
    values = vsum / count
    active = tuple(int(i) for i in np.flatnonzero(np.any(values != 0, axis=1)))
    return DcExposureResult(values, zsum / count, active, local)


def dc_outcome_fit(Y, X, Zhat, grid: Grid, kernel: KernelSpec, J_y: int,
                   lam: Optional[float], part: PartitionPlan,
                   J_grid: Optional[Sequence[int]] = None, gram=None) -> OutcomeFit:
    """Average per-block outcome fits (zeros included for unselected covariates).

    With ``J_grid`` each block picks its own sparsity level by HBIC.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    Zhat = np.asarray(Zhat, dtype=float)
    n = len(Y)
    if part.n != n:
        raise ValueError("partition size does not match the data")
    need = (max(J_grid) if J_grid else J_y) + 1
    if min(len(b) for b in part.blocks) < need:
        raise ValueError(f"every block needs at least {need} subjects")
    if gram is None:
        gram = gram_matrix(kernel, grid)
    fits = []
    for rows in part.blocks:
        if J_grid:
            _, f = select_sparsity(Y[rows], X[rows], Zhat[rows], grid, kernel, J_grid, lam,
                                   gram=gram, return_fit=True)
        else:
            f = outcome_fit(Y[rows], X[rows], Zhat[rows], grid, kernel, J_y, lam, gram=gram)
        fits.append(f)
    if len(fits) == 1:
        return fits[0]
    beta = np.mean([f.beta for f in fits], axis=0)
    alpha = np.mean([f.alpha for f in fits], axis=0)
    b_values = gram @ alpha
    fitted_b = grid.weight * (Zhat @ b_values)
    active = tuple(int(i) for i in np.flatnonzero(beta))
    resid = Y - X @ beta - fitted_b
    return OutcomeFit(
        beta=beta,
        active_set=active,
        alpha=alpha,
        b_values=b_values,
        lam=fits[0].lam,
        sigma2=float(resid @ resid) / max(n - len(active), 1),
        loss=outcome_loss(Y, X, beta, fitted_b, alpha, gram, fits[0].lam),
        iterations=max(f.iterations for f in fits),
        converged=all(f.converged for f in fits),
    )
