"""Simulation designs with known ground truth.

All designs share the same covariate structure: ``X`` is Gaussian with an
AR(1) correlation, covariates 1..5 drive the exposure and covariates 1 and
6..10 drive the outcome, so that (1-based)

    confounders  {1}
    precision    {6, ..., 10}
    instruments  {2, 3, 4, 5}
    irrelevant   {11, ..., p}

The exposure error is ``xi1 * phi1(t) + xi2 * phi2(t)`` and ``(xi1, xi2, eps)``
are jointly Gaussian with ``Cov(xi1, eps) = rho2`` and
``Cov(xi2, eps) = 0.8 * rho2``, which makes the exposure endogenous.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .numerics import Grid, ar1_covariance, make_rng, mvn_sample

DESIGNS = ("example1_1d", "example2_2d", "example4_power")

CONFOUNDERS = (0,)
PRECISION = (5, 6, 7, 8, 9)
INSTRUMENTS = (1, 2, 3, 4)
EXPOSURE_SUPPORT = CONFOUNDERS + INSTRUMENTS
OUTCOME_SUPPORT = CONFOUNDERS + PRECISION

BETA_EXAMPLE1 = (7.0, 0.0, 0.0, 0.0, 0.0, 5.5, 4.0, 3.5, 5.0, 4.5)
BETA_EXAMPLE2 = (2.0, 0.0, 0.0, 0.0, 0.0, 5.5, 4.0, 3.5, 5.0, 4.5)
POWER_SIGNALS = (0.0, 0.04, 0.08, 0.12, 0.16, 0.20)


@dataclass
class SimConfig:
    design: str = "example1_1d"
    n: int = 200
    p: int = 20
    rho1: float = 0.3
    rho2: float = 0.0
    b: float = 0.0
    m: int = 100
    m1: int = 20
    m2: int = 30
    seed: int = 0
    n_terms: Optional[int] = None  # terms in the B(t) expansion; design default if None

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}")
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.p < 10:
            raise ValueError("p must be at least 10 (true supports use covariates 1..10)")
        if not -1 < self.rho1 < 1:
            raise ValueError("rho1 must lie in (-1, 1)")
        if self.b < 0:
            raise ValueError("signal scale b must be nonnegative")
        if self.design == "example2_2d":
            if self.m1 < 2 or self.m2 < 2:
                raise ValueError("2-D grid needs at least 2 points per axis")
        elif self.m < 2:
            raise ValueError("grid needs at least 2 points")
        noise_covariance(self.rho2)

    def with_seed(self, seed: int) -> "SimConfig":
        d = asdict(self)
        d["seed"] = seed
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Truth:
    beta: np.ndarray
    B: np.ndarray  # on grid
    C: np.ndarray  # p x m, coefficient functions on grid
    confounders: tuple = CONFOUNDERS
    precision: tuple = PRECISION
    instruments: tuple = INSTRUMENTS
    # noise realisations, kept so Y can be rebuilt exactly
    xi: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None  # 2 x m random basis on grid

    @property
    def exposure_support(self) -> tuple:
        return tuple(sorted(self.confounders + self.instruments))

    @property
    def outcome_support(self) -> tuple:
        return tuple(sorted(self.confounders + self.precision))

    def to_json(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "confounders": [i + 1 for i in self.confounders],
            "precision": [i + 1 for i in self.precision],
            "instruments": [i + 1 for i in self.instruments],
            "irrelevant": [i + 1 for i in range(len(self.beta))
                           if i not in self.confounders + self.precision + self.instruments],
        }


@dataclass
class FunctionalDataset:
    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    grid: Grid
    truth: Optional[Truth] = None
    config: Optional[SimConfig] = field(default=None, repr=False)

    def __post_init__(self):
        n = self.X.shape[0]
        if self.Z.shape[0] != n or self.Y.shape[0] != n:
            raise ValueError("X, Z and Y must have the same number of rows")
        if self.Z.shape[1] != self.grid.m:
            raise ValueError("Z columns must match the grid")
        if self.truth is not None and self.truth.B.shape[0] != self.grid.m:
            raise ValueError("truth grids must match the data grid")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "FunctionalDataset":
        rows = np.asarray(rows)
        return FunctionalDataset(self.X[rows], self.Z[rows], self.Y[rows], self.grid,
                                 self.truth, self.config)


def basis_phi(k: int, t):
    """Orthonormal Fourier-type basis on [0, 1].

    ``phi_{2j-1} = sqrt(2) cos((2j-1) pi t)``, ``phi_{2j} = sqrt(2) sin((2j-1) pi t)``.
    """
    if k < 1:
        raise ValueError("basis index starts at 1")
    freq = (2 * ((k + 1) // 2) - 1) * np.pi
    t = np.asarray(t, dtype=float)
    if k % 2:
        return np.sqrt(2.0) * np.cos(freq * t)
    return np.sqrt(2.0) * np.sin(freq * t)


def noise_covariance(rho2: float) -> np.ndarray:
    """Covariance of ``(xi1, xi2, eps)``; rejects values that are not PSD."""
    cov = np.array([
        [1.0, 0.0, rho2],
        [0.0, 0.64, 0.8 * rho2],
        [rho2, 0.8 * rho2, 1.0],
    ])
    if np.linalg.eigvalsh(cov)[0] < -1e-12:
        raise ValueError(f"rho2={rho2} gives a non-PSD noise covariance")
    return cov


def coef_functions_1d(t: np.ndarray) -> np.ndarray:
    """C_1..C_5 of the 1-D design on ``t``."""
    return np.stack([
        2 * t**2,
        np.cos(3 * np.pi * t / 2 + np.pi / 2),
        np.sqrt(2) * np.sin(np.pi * t / 2) + 3 * np.sqrt(2) * np.sin(3 * np.pi * t / 2),
        25 * np.exp(-t),
        5 + 7 * t,
    ])


def coef_functions_2d(pts: np.ndarray) -> np.ndarray:
    t1, t2 = pts[:, 0], pts[:, 1]
    return np.stack([
        2 * (t1**2 + t2**2),
        3 * np.cos(np.pi * t1 / 2) * np.cos(np.pi * t2 / 2),
        np.sqrt(2) / 2 * (np.sin(np.pi * t1 / 2) + 3 * np.sin(3 * np.pi * t2 / 2)),
        np.exp(-(t1 - t2)),
        2 + t1 + t2,
    ])


def effect_1d(t: np.ndarray, scale: float, n_terms: int) -> np.ndarray:
    """``scale * sum_k (-1)^(k+1) k^-2 phi_k(t)``."""
    out = np.zeros_like(np.asarray(t, dtype=float))
    for k in range(1, n_terms + 1):
        out = out + scale * (-1) ** (k + 1) * k ** -2.0 * basis_phi(k, t)
    return out


def effect_2d(pts: np.ndarray) -> np.ndarray:
    return np.exp(-(pts[:, 0] - pts[:, 1]))


def _simulate(cfg: SimConfig, grid: Grid, C5: np.ndarray, phi: np.ndarray,
              B: np.ndarray, beta_head) -> FunctionalDataset:
    rng = make_rng(cfg.seed)
    X = mvn_sample(ar1_covariance(cfg.p, cfg.rho1), cfg.n, rng)
    noise = mvn_sample(noise_covariance(cfg.rho2), cfg.n, rng)
    xi, eps = noise[:, :2], noise[:, 2]

    C = np.zeros((cfg.p, grid.m))
    C[:5] = C5
    beta = np.zeros(cfg.p)
    beta[: len(beta_head)] = beta_head

    Z = X @ C + xi @ phi
    Y = X @ beta + grid.weight * (Z @ B) + eps
    truth = Truth(beta=beta, B=B, C=C, xi=xi, eps=eps, phi=phi)
    return FunctionalDataset(X, Z, Y, grid, truth, cfg)


def gen_example1(cfg: SimConfig) -> FunctionalDataset:
    if cfg.design != "example1_1d":
        raise ValueError("gen_example1 needs design=example1_1d")
    grid = Grid.uniform(cfg.m)
    t = grid.points
    phi = np.stack([basis_phi(1, t), basis_phi(2, t)])
    B = effect_1d(t, 4.0, cfg.n_terms or 10)
    return _simulate(cfg, grid, coef_functions_1d(t), phi, B, BETA_EXAMPLE1)


def gen_example2(cfg: SimConfig, full_grid: bool = False) -> FunctionalDataset:
    if cfg.design != "example2_2d":
        raise ValueError("gen_example2 needs design=example2_2d")
    m1, m2 = (100, 150) if full_grid else (cfg.m1, cfg.m2)
    grid = Grid.uniform_2d(m1, m2)
    pts = grid.points
    phi = np.stack([
        1.588 * np.sin(np.pi * pts[:, 0]),
        2.157 * (np.cos(np.pi * pts[:, 1]) - 0.039),
    ])
    return _simulate(cfg, grid, coef_functions_2d(pts), phi, effect_2d(pts), BETA_EXAMPLE2)


def gen_example4(cfg: SimConfig) -> FunctionalDataset:
    if cfg.design != "example4_power":
        raise ValueError("gen_example4 needs design=example4_power")
    grid = Grid.uniform(cfg.m)
    t = grid.points
    phi = np.stack([basis_phi(1, t), basis_phi(2, t)])
    B = effect_1d(t, cfg.b, cfg.n_terms or 5)
    return _simulate(cfg, grid, coef_functions_1d(t), phi, B, BETA_EXAMPLE1)


def generate(cfg: SimConfig, full_grid: bool = False) -> FunctionalDataset:
    if cfg.design == "example1_1d":
        return gen_example1(cfg)
    if cfg.design == "example2_2d":
        return gen_example2(cfg, full_grid=full_grid)
    return gen_example4(cfg)


def rebuild_outcome(ds: FunctionalDataset) -> np.ndarray:
    """Recompute Y from the stored truth and noise realisations."""
    t = ds.truth
    Z = ds.X @ t.C + t.xi @ t.phi
    return ds.X @ t.beta + ds.grid.weight * (Z @ t.B) + t.eps
