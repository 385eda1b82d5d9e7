"""Kernels, grids and discretised integral operators.

Operators on a grid are stored in the "tilde" convention: the matrix of an
integral operator with kernel ``k`` is ``weight * k(t_i, t_j)``.  Under this
convention composition is the plain matrix product and traces/spectra are
those of the matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

KERNEL_FAMILIES = ("brownian", "ornstein_uhlenbeck", "gaussian", "product_2d")
_ALIASES = {"ou": "ornstein_uhlenbeck", "bm": "brownian", "rbf": "gaussian"}


@dataclass(frozen=True)
class KernelSpec:
    family: str
    bandwidth: Optional[float] = None
    inner: Optional["KernelSpec"] = None

    def __post_init__(self):
        family = _ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", family)
        if family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if family == "gaussian":
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError("gaussian kernel needs a positive bandwidth")
        if family == "product_2d":
            if self.inner is None or self.inner.family == "product_2d":
                raise ValueError("product_2d must wrap a 1-D kernel family")

    @property
    def ndim(self) -> int:
        return 2 if self.family == "product_2d" else 1

    @classmethod
    def parse(cls, text: str, bandwidth: Optional[float] = None) -> "KernelSpec":
        """Parse ``brownian``, ``ou``, ``gaussian`` or ``product:<inner>``."""
        text = text.strip()
        if text.startswith("product:"):
            return cls("product_2d", inner=cls.parse(text[len("product:"):], bandwidth))
        return cls(text, bandwidth=bandwidth if _ALIASES.get(text, text) == "gaussian" else None)

    def __str__(self) -> str:
        if self.family == "product_2d":
            return f"product:{self.inner}"
        if self.family == "gaussian":
            return f"gaussian(h={self.bandwidth:g})"
        return self.family

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.bandwidth is not None:
            out["bandwidth"] = self.bandwidth
        if self.inner is not None:
            out["inner"] = self.inner.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        inner = cls.from_dict(d["inner"]) if d.get("inner") else None
        return cls(d["family"], bandwidth=d.get("bandwidth"), inner=inner)


def default_kernel(ndim: int = 1, bandwidth: float = 0.2) -> KernelSpec:
    base = KernelSpec("gaussian", bandwidth=bandwidth)
    return base if ndim == 1 else KernelSpec("product_2d", inner=base)


@dataclass(frozen=True, eq=False)
class Grid:
    """Observation locations with a uniform rectangle-rule weight.

    ``points`` has shape ``(m,)`` for 1-D grids and ``(m, 2)`` for 2-D grids
    (flattened row-major).  Each point is the centre of a cell whose side is
    the point spacing along that axis, so the domain ``T`` is the union of the
    cells and ``weight`` defaults to ``|T| / m`` (the cell volume).
    """

    points: np.ndarray
    weight: float = field(default=None)
    shape: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 2 and pts.shape[1] == 1:
            pts = pts[:, 0]
        if pts.ndim not in (1, 2) or (pts.ndim == 2 and pts.shape[1] != 2):
            raise ValueError("grid points must be 1-D or (m, 2)")
        if pts.shape[0] < 2:
            raise ValueError("grid needs at least 2 points")
        if pts.ndim == 1 and np.any(np.diff(pts) <= 0):
            raise ValueError("1-D grid points must be strictly increasing")
        if pts.ndim == 2:
            order = np.lexsort((pts[:, 1], pts[:, 0]))
            if np.any(order != np.arange(len(pts))):
                raise ValueError("2-D grid points must be in lexicographic order")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.weight is None:
            object.__setattr__(self, "weight", float(np.prod(self.spacing)))
        elif not self.weight > 0:
            raise ValueError("grid weight must be positive")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def ndim(self) -> int:
        return self.points.ndim

    @property
    def spacing(self) -> np.ndarray:
        """Mean distance between consecutive distinct coordinates, per axis."""
        pts = self.points.reshape(self.m, -1)
        out = []
        for a in range(pts.shape[1]):
            u = np.unique(pts[:, a])
            out.append((u[-1] - u[0]) / (len(u) - 1) if len(u) > 1 else 0.0)
        return np.array(out)

    @property
    def bounds(self) -> np.ndarray:
        """``(ndim, 2)`` per-axis domain ``[low, high]``: outermost points plus half a cell."""
        pts = self.points.reshape(self.m, -1)
        half = 0.5 * self.spacing
        return np.stack([pts.min(axis=0) - half, pts.max(axis=0) + half], axis=1)

    @property
    def volume(self) -> float:
        return self.weight * self.m

    def subgrid(self, index) -> "Grid":
        """Restriction to ``index``; keeps the parent's quadrature weight."""
        return Grid(self.points[np.asarray(index)], weight=self.weight)

    @classmethod
    def uniform(cls, m: int, low: float = 0.0, high: float = 1.0) -> "Grid":
        """``m`` cell midpoints partitioning ``[low, high]``; weight ``(high - low) / m``."""
        return cls(midpoints(m, low, high), weight=(high - low) / m)

    @classmethod
    def uniform_2d(cls, m1: int, m2: int) -> "Grid":
        t1, t2 = midpoints(m1), midpoints(m2)
        pts = np.stack(np.meshgrid(t1, t2, indexing="ij"), axis=-1).reshape(-1, 2)
        return cls(pts, weight=1.0 / (m1 * m2), shape=(m1, m2))


def midpoints(m: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one cell")
    return low + (np.arange(m) + 0.5) * (high - low) / m


def _kernel_1d(family: str, bandwidth, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    s = s[:, None]
    t = t[None, :]
    if family == "brownian":
        return np.minimum(s, t)
    if family == "ornstein_uhlenbeck":
        return np.exp(-np.abs(s - t))
    if family == "gaussian":
        return np.exp(-((s - t) ** 2) / (2.0 * bandwidth**2))
    raise ValueError(family)


def kernel_eval(kernel: KernelSpec, s, t) -> np.ndarray:
    """Kernel matrix ``K(s_i, t_j)`` between two sets of locations."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if kernel.family == "product_2d":
        if s.ndim != 2 or t.ndim != 2 or s.shape[1] != 2 or t.shape[1] != 2:
            raise ValueError("product_2d kernel needs 2-D locations")
        inner = kernel.inner
        return (_kernel_1d(inner.family, inner.bandwidth, s[:, 0], t[:, 0])
                * _kernel_1d(inner.family, inner.bandwidth, s[:, 1], t[:, 1]))
    if s.ndim != 1 or t.ndim != 1:
        raise ValueError(f"{kernel.family} kernel needs 1-D locations")
    return _kernel_1d(kernel.family, kernel.bandwidth, s, t)


def gram_matrix(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    """Pointwise Gram matrix ``K(t_j, t_k)`` on the grid."""
    if kernel.ndim != grid.ndim:
        raise ValueError(f"{kernel.ndim}-D kernel on a {grid.ndim}-D grid")
    g = kernel_eval(kernel, grid.points, grid.points)
    return 0.5 * (g + g.T)


def operator_matrix(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    """Tilde matrix of the integral operator: ``weight * Gram``."""
    return grid.weight * gram_matrix(kernel, grid)


@dataclass(frozen=True, eq=False)
class EigenDecomp:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def sym_eig(a: np.ndarray, clip: bool = True) -> EigenDecomp:
    """Symmetric eigendecomposition, eigenvalues in descending order.

    Negative eigenvalues no larger in magnitude than ``1e-10 * max`` are set
    to zero when ``clip`` is true.
    """
    a = np.asarray(a, dtype=float)
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    w, v = w[::-1].copy(), v[:, ::-1].copy()
    if clip and w.size:
        tol = 1e-10 * max(abs(w[0]), abs(w[-1]))
        w[(w < 0) & (w >= -tol)] = 0.0
    return EigenDecomp(w, v)


def operator_sqrt(a: np.ndarray) -> np.ndarray:
    """PSD square root of a symmetric matrix."""
    eig = sym_eig(a, clip=False)
    w = eig.eigenvalues
    top = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
    if w.size and w[-1] < -1e-6 * top:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[-1]:.3g})")
    root = np.sqrt(np.clip(w, 0.0, None))
    out = (eig.eigenvectors * root) @ eig.eigenvectors.T
    return 0.5 * (out + out.T)


def chi2_upper_tail(x: float, dof: float) -> float:
    """``P(chi2_dof > x)`` via the regularised upper incomplete gamma."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


def chi2_lower_tail(x: float, dof: float) -> float:
    if dof <= 0:
        raise ValueError("dof must be positive")
    if x <= 0:
        return 0.0
    return float(special.gammainc(0.5 * dof, 0.5 * x))


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    if not -1 < rho < 1:
        raise ValueError("AR(1) correlation must lie in (-1, 1)")
    idx = np.arange(p)
    lag = np.abs(idx[:, None] - idx[None, :])
    if rho == 0:
        return np.eye(p)
    return rho**lag


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; bit-reproducible for a given seed and numpy version."""
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor ``L`` with ``L @ L.T == cov``.

    Cholesky first, with up to three ridge-jitter retries starting at 1e-10;
    singular PSD input (e.g. an all-zero matrix) falls back to the symmetric
    square root.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eig = sym_eig(cov, clip=False)
    w = eig.eigenvalues
    if w[-1] < -1e-8 * max(w[0], 1.0):
        raise np.linalg.LinAlgError(f"covariance not PSD (min eigenvalue {w[-1]:.3g})")
    scale = max(float(np.trace(cov)) / cov.shape[0], 1.0)
    jitter = 1e-10 * scale
    for _ in range(3):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10
    return operator_sqrt(cov)


def mvn_sample(cov: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from N(0, cov) as an ``n x p`` matrix."""
    factor = psd_factor(cov)
    z = rng.standard_normal((n, factor.shape[0]))
    return z @ factor.T

