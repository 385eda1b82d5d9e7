"""Acceptance criteria 1-8 at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary
under "acceptance criteria", then asserts.  Seeds are fixed in advance:
Monte Carlo runs use the configuration default ``seed=0`` (replicate ``r``
draws with seed ``r``), the oracle instances use seeds ``1000..1099``.
"""
import itertools
import time

import numpy as np
import pytest

from flsem import datagen
from flsem.config import RunConfig
from flsem.exposure import GramBasis, exposure_loss, fgsdar_fit, ridge_solve_active
from flsem.inference import build_Rn, rn_traces, welch_satterthwaite
from flsem.ivcheck import IvProblem, check_identifiability, corollary_max_invalid
from flsem.metrics import mc_aggregate
from flsem.numerics import Grid, default_kernel, gram_matrix
from flsem.outcome import residual_maker
from flsem.pipeline import fit_pipeline, run_replicates
from flsem.scale import PartitionPlan, dc_exposure_fit, dc_outcome_fit, full_window
from flsem.outcome import outcome_fit

pytestmark = pytest.mark.slow

TABLE = dict(design="example1_1d", n=200, p=20, m=100, rho1=0.3, j_z="auto", reps=30)
_cache = {}


def table_run(rho2):
    """Aggregated Example-1 replicates (shared by criteria 1, 2, 3 and 7)."""
    if rho2 not in _cache:
        t0 = time.perf_counter()
        reps = run_replicates("table", RunConfig(rho2=rho2, **TABLE))
        _cache[rho2] = (mc_aggregate(reps), reps, time.perf_counter() - t0)
    return _cache[rho2]


def power_run(b, rho2):
    key = ("power", b, rho2)
    if key not in _cache:
        t0 = time.perf_counter()
        cfg = RunConfig(design="example4_power", rho2=rho2, b=b, level=0.05, reps=500)
        reps = run_replicates("power", cfg)
        _cache[key] = (reps, time.perf_counter() - t0)
    return _cache[key]


def check(log, name, conditions: dict, detail: str):
    ok = all(conditions.values())
    failed = [k for k, v in conditions.items() if not v]
    log.append((name, ok, detail + (f"  [failed: {', '.join(failed)}]" if failed else "")))
    assert ok, f"{name}: {detail}; failed {failed}"


def test_criterion_1_table1(acceptance_log):
    agg, _, secs = table_run(0.7)
    f = {k: agg[k].mean for k in agg}
    conds = {
        "FLSEM MSE_beta in [0.02, 0.20]": 0.02 <= f["FLSEM_MSE_beta"] <= 0.20,
        "FLSEM MSE_B in [0.002, 0.03]": 0.002 <= f["FLSEM_MSE_B"] <= 0.03,
        "PFLM MSE_beta >= 5": f["PFLM_MSE_beta"] >= 5,
        "FLSEM FZ_Y = 0": f["FLSEM_FZ_Y"] == 0,
        "FLSEM FZ_Z = 0": f["FLSEM_FZ_Z"] == 0,
        "runtime <= 300 s": secs <= 300,
    }
    detail = (f"FLSEM MSE_beta={f['FLSEM_MSE_beta']:.4g} MSE_B={f['FLSEM_MSE_B']:.4g} "
              f"FZ_Y={f['FLSEM_FZ_Y']:.3g} FZ_Z={f['FLSEM_FZ_Z']:.3g}; "
              f"PFLM MSE_beta={f['PFLM_MSE_beta']:.4g}; {secs:.0f}s")
    check(acceptance_log, "criterion 1 (Table 1)", conds, detail)


def test_criterion_2_endogeneity_gradient(acceptance_log):
    rhos = (0.0, 0.2, 0.5, 0.7)
    pflm = [table_run(r)[0]["PFLM_MSE_B"].mean for r in rhos]
    flsem = [table_run(r)[0]["FLSEM_MSE_B"].mean for r in rhos]
    conds = {
        "PFLM MSE_B nondecreasing": all(a <= b for a, b in zip(pflm, pflm[1:])),
        "FLSEM MSE_B within 3x of rho2=0": max(flsem) <= 3 * flsem[0],
    }
    detail = ("PFLM MSE_B " + ", ".join(f"{v:.3g}" for v in pflm)
              + "; FLSEM MSE_B " + ", ".join(f"{v:.3g}" for v in flsem))
    check(acceptance_log, "criterion 2 (endogeneity gradient)", conds, detail)


def test_criterion_3_table2(acceptance_log):
    agg = table_run(0.7)[0]
    mse_c = [agg[f"MSE_C{l}"].mean for l in range(1, 6)]
    pmse = agg["PMSE_Z"].mean
    conds = {"MSE_C <= 0.02": max(mse_c) <= 0.02, "PMSE_Z in [1.3, 2.0]": 1.3 <= pmse <= 2.0}
    detail = "MSE_C " + ", ".join(f"{v:.4f}" for v in mse_c) + f"; PMSE_Z={pmse:.4f}"
    check(acceptance_log, "criterion 3 (Table 2)", conds, detail)


def test_criterion_4_size_and_power(acceptance_log):
    size_reps, t0 = power_run(0.0, 0.5)
    power_reps, t1 = power_run(0.2, 0.5)
    naive_reps, t2 = power_run(0.0, 0.7)
    size = np.mean([r["reject"] for r in size_reps])
    power = np.mean([r["reject"] for r in power_reps])
    naive = np.mean([r["naive_reject"] for r in naive_reps])
    secs = t0 + t1 + t2
    conds = {
        "size in [0.03, 0.08]": 0.03 <= size <= 0.08,
        "power at b=0.2 >= 0.90": power >= 0.90,
        "naive size at rho2=0.7 >= 0.15": naive >= 0.15,
        "runtime <= 600 s": secs <= 600,
    }
    detail = f"size={size:.3f} power={power:.3f} naive={naive:.3f}; {secs:.0f}s"
    check(acceptance_log, "criterion 4 (size and power)", conds, detail)


def test_criterion_5_identifiability(acceptance_log):
    c1 = np.array([[1, 1, 2, 1, 2], [1, 2, 1, 1, 3]], dtype=float).T
    c2 = np.array([[1, 1, 1, 2, 2], [1, 2, 3, 2, 3]], dtype=float).T
    r1 = check_identifiability(IvProblem([2, 3, 3, 8, 5], c1, 3))
    r2 = check_identifiability(IvProblem([2, 3, 6, 8, 10], c2, 4))
    conds = {
        "example (i) identifiable": r1.identifiable,
        "example (i) b=(1,1)": r1.b is not None and np.allclose(r1.b, [1, 1]),
        "example (i) beta": r1.beta is not None and np.allclose(r1.beta, [0, 0, 0, 6, 0]),
        "example (ii) not identifiable": not r2.identifiable,
        "corollary(5,2)=2": corollary_max_invalid(5, 2) == 2,
    }
    check(acceptance_log, "criterion 5 (identifiability)", conds,
          f"(i) b={None if r1.b is None else r1.b.tolist()}; (ii) identifiable={r2.identifiable}")


def test_criterion_6_oracle_equivalence(acceptance_log):
    grid = Grid.uniform(21)
    gram = gram_matrix(default_kernel(), grid)
    basis = GramBasis(gram)
    lam = 1e-6
    supports = list(itertools.combinations(range(8), 2))
    matches, worst = 0, 0.0
    for s in range(100):
        r = np.random.default_rng(1000 + s)
        X = r.standard_normal((60, 8))
        C = np.zeros((8, 21))
        for j in r.choice(8, 2, replace=False):
            C[j] = sum(r.normal() * datagen.basis_phi(k, grid.points) for k in range(1, 4))
        Z = X @ C
        losses = {S: exposure_loss(X[:, list(S)], Z, ridge_solve_active(X[:, list(S)], Z, basis, lam),
                                   basis, lam) for S in supports}
        oracle = min(losses, key=losses.get)
        matches += fgsdar_fit(X, Z, grid, None, 2, lam, gram=basis).active_set == oracle
        # dense LU solve of the Kronecker normal equations with the common
        # (I kron gram) factor removed; the Gaussian Gram matrix is numerically
        # singular, so the uncancelled system has no accurate dense solution
        XA = X[:, list(oracle)]
        n, m = Z.shape
        A = np.kron(XA.T @ XA, gram) + n * m * lam * np.eye(2 * m)
        dense = np.linalg.solve(A, (XA.T @ Z).ravel()).reshape(2, m)
        fast = ridge_solve_active(XA, Z, basis, lam)
        worst = max(worst, np.abs(fast - dense).max() / max(1.0, np.abs(dense).max()))
    conds = {"support matches >= 90/100": matches >= 90, "dense solve <= 1e-8": worst <= 1e-8}
    check(acceptance_log, "criterion 6 (oracle equivalence)", conds,
          f"support matches {matches}/100; max relative ridge error {worst:.2e}")


def test_criterion_7_invariants(acceptance_log):
    _, reps, _ = table_run(0.7)
    fixed = [r.get("fixed_point", np.nan) for r in reps]
    cfg = RunConfig(design="example4_power", rho2=0.5, seed=0)
    ds = datagen.generate(cfg.sim_config())
    res = fit_pipeline(ds, cfg)
    gram = gram_matrix(cfg.kernel_spec(), ds.grid)
    A = res.outcome.active_set
    M = residual_maker(ds.X[:, list(A)])
    idem = np.abs(M @ M - M).max()
    R = build_Rn(res.zhat, A, ds.X, gram, ds.grid)
    min_eig = np.linalg.eigvalsh(R).min()
    tr, tr2 = rn_traces(res.zhat, A, ds.X, gram, ds.grid)
    zeta, kappa = welch_satterthwaite(tr, tr2)
    ws1 = abs(kappa * zeta - np.trace(R)) / np.trace(R)
    ws2 = abs(kappa**2 * zeta - np.sum(R * R)) / np.sum(R * R)
    null = power_run(0.0, 0.5)[0]
    ratio = np.mean([r["S_n"] * r["sigma2"] for r in null]) / np.mean([r["tr_Rn"] for r in null])
    conds = {
        "fixed point on every criterion-1 fit": all(v == 1.0 for v in fixed),
        "M idempotent <= 1e-10": idem <= 1e-10,
        "R_n PSD": min_eig >= -1e-10 * np.abs(R).max(),
        "WS identities <= 1e-10": max(ws1, ws2) <= 1e-10,
        "null mean within 5%": abs(ratio - 1.0) <= 0.05,
    }
    detail = (f"fixed points {int(np.nansum(fixed))}/{len(fixed)}; |MM-M|={idem:.1e}; "
              f"min eig R={min_eig:.1e}; WS rel err {max(ws1, ws2):.1e}; "
              f"null mean ratio {ratio:.4f} (sigma2 = 1)")
    check(acceptance_log, "criterion 7 (invariants)", conds, detail)


def test_criterion_8_divide_and_conquer(acceptance_log):
    cfg = RunConfig(design="example2_2d", n=400, rho1=0.2, rho2=0.3, m1=20, m2=30, j_z=10,
                    dc_blocks=2, window_width=2 / 3, window_stride=1 / 3, reps=20)
    agg = mc_aggregate(run_replicates("dc", cfg))
    r_b = agg["dc_MSE_B"].mean / agg["full_MSE_B"].mean
    r_p = agg["dc_PMSE_Y"].mean / agg["full_PMSE_Y"].mean
    # degenerate plan: one block and one full-domain window reproduce the direct fits
    ds = datagen.generate(cfg.sim_config())
    kern = cfg.kernel_spec()
    gram = gram_matrix(kern, ds.grid)
    one = PartitionPlan(ds.n, 1)
    dc = dc_exposure_fit(ds.X, ds.Z, ds.grid, kern, 5, 1e-4, one, full_window(ds.grid))
    direct = fgsdar_fit(ds.X, ds.Z, ds.grid, kern, 5, 1e-4, gram=gram)
    zhat = ds.X @ direct.values
    dco = dc_outcome_fit(ds.Y, ds.X, zhat, ds.grid, kern, 6, None, one, gram=gram)
    do = outcome_fit(ds.Y, ds.X, zhat, ds.grid, kern, 6, gram=gram)
    exact = (np.array_equal(dc.values, direct.values) and np.array_equal(dco.beta, do.beta)
             and np.array_equal(dco.b_values, do.b_values))
    conds = {"MSE_B ratio <= 1.5": r_b <= 1.5, "PMSE ratio <= 1.5": r_p <= 1.5,
             "degenerate plan exact": exact}
    detail = (f"MSE_B full={agg['full_MSE_B'].mean:.4g} dc={agg['dc_MSE_B'].mean:.4g} "
              f"(ratio {r_b:.2f}); PMSE full={agg['full_PMSE_Y'].mean:.4g} "
              f"dc={agg['dc_PMSE_Y'].mean:.4g} (ratio {r_p:.2f})")
    check(acceptance_log, "criterion 8 (divide and conquer)", conds, detail)


def test_smoke_high_dimensional_screening(acceptance_log):
    """p=500 > n, so the default pipeline screens before the exposure fit."""
    cfg = RunConfig(p=500, rho2=0.5, j_z=5, reps=10)
    reps = run_replicates("table", cfg)
    fz = [r["FLSEM_FZ_Z"] for r in reps]
    # same replicates with screening switched off, reported for comparison
    off = run_replicates("table", RunConfig(p=500, rho2=0.5, j_z=5, reps=10, screen="off"))
    fz_off = [r["FLSEM_FZ_Z"] for r in off]
    check(acceptance_log, "smoke (p=500, 10 reps)", {"FZ_Z = 0 on all reps": max(fz) == 0},
          f"FZ_Z per rep {fz}; without screening {fz_off}")
