"""End-to-end estimation and the Monte Carlo replicate runners.

``fit_pipeline`` performs screening, the exposure fit, the plug-in
prediction ``Zhat``, the outcome fit and the nullity test on one dataset.
The replicate runners wrap it with data generation and metrics and return
one flat dict of numbers per replicate.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import datagen, exposure, metrics, outcome, scale, screening
from .config import RunConfig
from .datagen import EXPOSURE_SUPPORT, OUTCOME_SUPPORT, FunctionalDataset
from .inference import TestResult, test_from_fit
from .numerics import Grid, gram_matrix

TEST_SEED_OFFSET = 2**32  # held-out data streams never collide with training seeds


class StageError(RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class PipelineResult:
    screened: list  # 0-based columns kept by screening
    exposure_active: tuple
    values: np.ndarray  # p x m fitted coefficient functions
    zhat: np.ndarray
    outcome: outcome.OutcomeFit
    test: Optional[TestResult]
    exposure_fit: object = None
    lambda_k: Optional[float] = None
    outcome_rows: Optional[np.ndarray] = None  # rows used by the outcome stage


def _expand_outcome(fit: outcome.OutcomeFit, cols: list, p: int) -> outcome.OutcomeFit:
    beta = np.zeros(p)
    beta[cols] = fit.beta
    return replace(fit, beta=beta, active_set=tuple(cols[i] for i in fit.active_set))


def screen_columns(ds: FunctionalDataset, cfg: RunConfig) -> list:
    n, p = ds.X.shape
    if cfg.screen == "off" or (cfg.screen == "auto" and p <= n):
        return list(range(p))
    k_y = min(cfg.k_y or screening.default_k(n), p)
    k_z = min(cfg.k_z or screening.default_k(n), p)
    return screening.union_screen(screening.sis_rank(ds.Y, ds.X, k_y),
                                  screening.dcor_screen_functional(ds.Z, ds.X, k_z, cfg.seed))


def _lam(cfg: RunConfig, Y, X, Zhat, grid, kernel, gram, J_y) -> Optional[float]:
    if cfg.lam == "default":
        return None
    if cfg.lam == "gcv":
        J = J_y if J_y is not None else min(cfg.j_y_max, X.shape[1])
        return outcome.gcv_lambda(Y, X, Zhat, grid, kernel, J, np.logspace(-6, -1, 10), gram=gram)
    return float(cfg.lam)


def fit_exposure_stage(X, Z, grid: Grid, cfg: RunConfig, gram=None):
    """Returns ``(values p x m, zhat, active, fit, lambda_k)``."""
    kernel = cfg.kernel_spec(grid.ndim)
    p = X.shape[1]
    auto = cfg.j_z == "auto"
    J = min(cfg.j_z_max if auto else int(cfg.j_z), p)
    if cfg.dc_blocks > 1 or cfg.window_width is not None:
        if auto:
            raise ValueError("divide-and-conquer fits need a fixed J for the exposure")
        plan = (scale.make_windows(grid, cfg.window_width, cfg.window_stride or cfg.window_width)
                if cfg.window_width is not None else scale.full_window(grid))
        part = scale.PartitionPlan(X.shape[0], cfg.dc_blocks)
        res = scale.dc_exposure_fit(X, Z, grid, kernel, J, cfg.lambda_k, part, plan)
        return res.values, res.zhat, res.active_set, res, None
    gram = gram if gram is not None else gram_matrix(kernel, grid)
    if auto:
        fit = exposure.select_exposure_sparsity(X, Z, grid, kernel, range(1, J + 1),
                                                cfg.lambda_k, gram=gram)
    else:
        fit = exposure.fgsdar_fit(X, Z, grid, kernel, J, cfg.lambda_k, gram=gram)
    return fit.values, exposure.predict_zhat(fit, X), fit.active_set, fit, fit.lambda_k


def fit_outcome_stage(Y, X, Zhat, grid: Grid, cfg: RunConfig, gram) -> outcome.OutcomeFit:
    kernel = cfg.kernel_spec(grid.ndim)
    p = X.shape[1]
    J_y = None if cfg.j_y == "auto" else min(int(cfg.j_y), p)
    lam = _lam(cfg, Y, X, Zhat, grid, kernel, gram, J_y)
    J_grid = None if J_y is not None else range(1, min(cfg.j_y_max, p) + 1)
    if cfg.dc_blocks > 1:
        part = scale.PartitionPlan(len(Y), cfg.dc_blocks)
        return scale.dc_outcome_fit(Y, X, Zhat, grid, kernel, J_y or 0, lam, part,
                                    J_grid=J_grid, gram=gram)
    if J_grid is not None:
        return outcome.select_sparsity(Y, X, Zhat, grid, kernel, J_grid, lam, gram=gram,
                                       return_fit=True, charge_b_df=cfg.charge_b_df)[1]
    return outcome.outcome_fit(Y, X, Zhat, grid, kernel, J_y, lam, gram=gram,
                               charge_b_df=cfg.charge_b_df)


def _stage(name: str, fn: Callable, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def fit_pipeline(ds: FunctionalDataset, cfg: RunConfig, run_test: bool = True,
                 observed_z: bool = False) -> PipelineResult:
    """Screen, fit the exposure, plug in ``Zhat``, fit the outcome and test.

    With ``observed_z`` the exposure stage is skipped and the observed curves
    stand in for ``Zhat`` (the endogeneity-ignoring baseline).  With
    ``cfg.split`` the exposure is fitted on the first half of the subjects and
    the outcome stage and test use the second half.
    """
    n, p = ds.X.shape
    cols = _stage("screen", screen_columns, ds, cfg)
    X = ds.X[:, cols]
    kernel = _stage("kernel", cfg.kernel_spec, ds.grid.ndim)
    gram = gram_matrix(kernel, ds.grid)
    rows_z = rows_y = np.arange(n)
    if cfg.split:
        rows_z, rows_y = np.arange(n // 2), np.arange(n // 2, n)
    if observed_z:
        values, zhat, active, efit, lk = np.zeros((len(cols), ds.grid.m)), ds.Z, (), None, None
    else:
        values, _, active, efit, lk = _stage("fit-exposure", fit_exposure_stage, X[rows_z],
                                             ds.Z[rows_z], ds.grid, cfg, gram)
        # same product as predict_zhat; also covers the held-out half under split
        zhat = X @ values
    Y_o, X_o, Z_o = ds.Y[rows_y], X[rows_y], zhat[rows_y]
    ofit = _stage("fit-outcome", fit_outcome_stage, Y_o, X_o, Z_o, ds.grid, cfg, gram)
    test = None
    if run_test:
        test = _stage("test", test_from_fit, Y_o, X_o, Z_o, ofit, gram, ds.grid, cfg.sigma2_source)
    full_values = np.zeros((p, ds.grid.m))
    full_values[cols] = values
    return PipelineResult(
        screened=list(cols),
        exposure_active=tuple(cols[i] for i in active),
        values=full_values,
        zhat=zhat,
        outcome=_expand_outcome(ofit, list(cols), p),
        test=test,
        exposure_fit=efit,
        lambda_k=lk,
        outcome_rows=rows_y,
    )


# ---------------------------------------------------------------- replicates

def _test_data(cfg: RunConfig, seed: int) -> FunctionalDataset:
    sim = replace(cfg.sim_config(), n=cfg.n_test, seed=seed + TEST_SEED_OFFSET)
    return datagen.generate(sim, full_grid=cfg.full_grid)


def _outcome_metrics(prefix: str, fit: outcome.OutcomeFit, ds, test) -> dict:
    w = ds.grid.weight
    fz, fn = metrics.selection_errors(OUTCOME_SUPPORT, fit.active_set)
    return {
        f"{prefix}_FZ_Y": fz,
        f"{prefix}_FN_Y": fn,
        f"{prefix}_MSE_B": metrics.mse_B(fit.b_values, ds.truth.B, w),
        f"{prefix}_MSE_beta": metrics.mse_beta(fit.beta, ds.truth.beta),
        f"{prefix}_PMSE_Y": metrics.pmse_outcome(fit, test.X, test.Z, test.Y, w),
    }


def replicate_table(cfg: RunConfig, seed: int) -> dict:
    """One Example-1/2 replicate: FLSEM and PFLM outcome metrics, exposure metrics."""
    ds = datagen.generate(replace(cfg.sim_config(), seed=seed), full_grid=cfg.full_grid)
    test = _test_data(cfg, seed)
    res = fit_pipeline(ds, cfg, run_test=False)
    base = fit_pipeline(ds, cfg, run_test=False, observed_z=True)
    w = ds.grid.weight
    fz_z, fn_z = metrics.selection_errors(EXPOSURE_SUPPORT, res.exposure_active)
    out = {"seed": seed, "FLSEM_FZ_Z": fz_z, "FLSEM_FN_Z": fn_z}
    out.update(_outcome_metrics("FLSEM", res.outcome, ds, test))
    out.update(_outcome_metrics("PFLM", base.outcome, ds, test))
    for l in range(5):
        out[f"MSE_C{l + 1}"] = metrics.mse_function(res.values[l], ds.truth.C[l], w)
    out["PMSE_Z"] = metrics.pmse_exposure(res.values, test.X, test.Z, w)
    if isinstance(res.exposure_fit, exposure.ExposureFit) and not cfg.split:
        gram = gram_matrix(cfg.kernel_spec(ds.grid.ndim), ds.grid)
        X = ds.X[:, res.screened]
        out["fixed_point"] = float(res.exposure_fit.converged and exposure.fixed_point_check(
            res.exposure_fit, X, ds.Z, gram))
    return out


def replicate_power(cfg: RunConfig, seed: int) -> dict:
    """One Example-4 replicate: plug-in test and the naive observed-curve test."""
    ds = datagen.generate(replace(cfg.sim_config(), seed=seed))
    res = fit_pipeline(ds, cfg)
    naive = fit_pipeline(ds, cfg, observed_z=True)
    return {
        "seed": seed,
        "p_value": res.test.p_value,
        "reject": float(res.test.reject(cfg.level)),
        "naive_p_value": naive.test.p_value,
        "naive_reject": float(naive.test.reject(cfg.level)),
        "S_n": res.test.S_n,
        "sigma2": res.test.sigma2,
        "tr_Rn": res.test.tr_Rn,
    }


def replicate_dc(cfg: RunConfig, seed: int) -> dict:
    """One paired replicate: full-sample pipeline vs the divide-and-conquer one."""
    ds = datagen.generate(replace(cfg.sim_config(), seed=seed), full_grid=cfg.full_grid)
    test = _test_data(cfg, seed)
    full_cfg = replace(cfg, dc_blocks=1, window_width=None, window_stride=None)
    out = {"seed": seed}
    for name, c in (("full", full_cfg), ("dc", cfg)):
        res = fit_pipeline(ds, c, run_test=False)
        out.update(_outcome_metrics(name, res.outcome, ds, test))
    return out


RUNNERS = {"table": replicate_table, "power": replicate_power, "dc": replicate_dc}


def _call(args):
    kind, cfg, seed = args
    return RUNNERS[kind](cfg, seed)


def resolve_threads(threads: Optional[int]) -> int:
    if threads:
        return int(threads)
    return int(os.environ.get("FLSEM_THREADS", "1") or 1)


def run_replicates(kind: str, cfg: RunConfig, reps: Optional[int] = None,
                   threads: Optional[int] = None) -> list:
    """Replicate ``r`` uses seed ``cfg.seed + r``; results come back in index order."""
    reps = reps or cfg.reps
    jobs = [(kind, cfg, cfg.seed + r) for r in range(reps)]
    workers = resolve_threads(threads or cfg.threads)
    if workers <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs))
