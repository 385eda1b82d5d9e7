"""``flsem`` command-line interface.

Every subcommand builds a :class:`RunConfig` from an optional ``--config``
file, then the subcommand's own flags, then any ``--set key=value`` pairs
(later sources win).  Exit codes: 0 success, 2 invalid input, 3 numerical
failure, 4 enumeration guard exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import datagen, exposure, inference, io, ivcheck, metrics, outcome, pipeline, screening
from .config import ConfigError, RunConfig, coerce, parse_config
from .numerics import gram_matrix

log = logging.getLogger("flsem")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_GUARD = 0, 2, 3, 4

# flag name -> RunConfig key, per subcommand
SIM_FLAGS = {"design": "design", "n": "n", "p": "p", "rho1": "rho1", "rho2": "rho2", "b": "b",
             "m": "m", "m1": "m1", "m2": "m2", "n-terms": "n_terms"}
KERNEL_FLAGS = {"kernel": "kernel", "bandwidth": "bandwidth"}
EXPOSURE_FLAGS = {"j": "j_z", "lambda-k": "lambda_k", "dc-blocks": "dc_blocks",
                  "window-width": "window_width", "window-stride": "window_stride"}
OUTCOME_FLAGS = {"jy": "j_y", "lambda": "lam", "dc-blocks": "dc_blocks",
                 "sigma2-source": "sigma2_source"}


def _add_flags(p: argparse.ArgumentParser, flags: dict):
    for flag, key in flags.items():
        p.add_argument(f"--{flag}", dest=f"cfg_{key}", default=None, metavar=key.upper())


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key")
    p.add_argument("--seed", dest="cfg_seed", default=None)
    p.add_argument("--threads", dest="cfg_threads", default=None,
                   help="worker processes (falls back to FLSEM_THREADS, then 1)")


def build_config(args) -> RunConfig:
    overrides = {}
    for name, val in vars(args).items():
        if name.startswith("cfg_") and val is not None:
            key = name[4:]
            overrides[key] = val if isinstance(val, bool) else coerce(key, str(val))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        k = "lam" if k.strip() == "lambda" else k.strip()
        try:
            overrides[k] = coerce(k, v)
        except KeyError:
            raise ConfigError(f"unknown key {k!r}") from None
    return parse_config(args.config, overrides)


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _finish(outdir, command, cfg: RunConfig, outputs, stages=None):
    io.write_manifest(outdir, command, cfg.seed, cfg.to_dict(), cfg.digest(), outputs, stages)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = build_config(args)
    ds = datagen.generate(cfg.sim_config(), full_grid=cfg.full_grid)
    out = _outdir(args.out)
    files = io.write_dataset(out, ds)
    _finish(out, "simulate", cfg, files)
    return EXIT_OK


def cmd_screen(args) -> int:
    cfg = build_config(args)
    X, Y, Z = io.read_matrix(args.x), io.read_vector(args.y), io.read_matrix(args.z)
    n, p = X.shape
    k_y = cfg.k_y if cfg.k_y is not None else min(screening.default_k(n), p)
    k_z = cfg.k_z if cfg.k_z is not None else min(screening.default_k(n), p)
    idx = screening.union_screen(screening.sis_rank(Y, X, k_y),
                                 screening.dcor_screen_functional(Z, X, k_z, cfg.seed))
    out = _outdir(args.out)
    io.write_indices(os.path.join(out, "screened.csv"), idx)
    _finish(out, "screen", cfg, ["screened.csv"])
    return EXIT_OK


def cmd_fit_exposure(args) -> int:
    cfg = build_config(args)
    X, Z, grid = io.read_matrix(args.x), io.read_matrix(args.z), io.read_grid(args.grid)
    values, _, active, fit, lam_k = pipeline.fit_exposure_stage(X, Z, grid, cfg)
    zhat = X @ values
    out = _outdir(args.out)
    files = ["values.csv", "active.csv", "zhat.csv", "fit.json"]
    io.write_matrix(os.path.join(out, "values.csv"), values)
    io.write_indices(os.path.join(out, "active.csv"), active)
    io.write_matrix(os.path.join(out, "zhat.csv"), zhat)
    report = {"seed": cfg.seed, "config_hash": cfg.digest(), "active_set": [i + 1 for i in active]}
    if isinstance(fit, exposure.ExposureFit):
        io.write_matrix(os.path.join(out, "coef.csv"), fit.coef)
        files.insert(0, "coef.csv")
        report.update(fit.summary())
    else:
        report.update({"divide_and_conquer": True, "local_fits": len(fit.local_fits)})
    io.write_json(os.path.join(out, "fit.json"), report)
    _finish(out, "fit-exposure", cfg, files)
    return EXIT_OK


def _write_outcome(out, prefix, fit: outcome.OutcomeFit, cfg) -> list:
    io.write_vector(os.path.join(out, f"{prefix}beta.csv"), fit.beta)
    io.write_vector(os.path.join(out, f"{prefix}b_on_grid.csv"), fit.b_values)
    report = {"seed": cfg.seed, "config_hash": cfg.digest(), **fit.summary()}
    io.write_json(os.path.join(out, f"{prefix}fit.json"), report)
    return [f"{prefix}beta.csv", f"{prefix}b_on_grid.csv", f"{prefix}fit.json"]


def cmd_fit_outcome(args) -> int:
    cfg = build_config(args)
    Y, X = io.read_vector(args.y), io.read_matrix(args.x)
    Zhat, grid = io.read_matrix(args.zhat), io.read_grid(args.grid)
    rows = np.arange(len(Y))
    if cfg.split:
        rows = rows[len(Y) // 2:]
    gram = gram_matrix(cfg.kernel_spec(grid.ndim), grid)
    fit = pipeline.fit_outcome_stage(Y[rows], X[rows], Zhat[rows], grid, cfg, gram)
    out = _outdir(args.out)
    files = _write_outcome(out, "", fit, cfg)
    if args.baseline_z:
        Z = io.read_matrix(args.baseline_z)
        base = pipeline.fit_outcome_stage(Y[rows], X[rows], Z[rows], grid, cfg, gram)
        files += _write_outcome(out, "baseline_", base, cfg)
    _finish(out, "fit-outcome", cfg, files)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = build_config(args)
    ds = io.read_dataset(args.data)
    res = pipeline.fit_pipeline(ds, cfg)
    out = _outdir(args.out)
    io.write_indices(os.path.join(out, "screened.csv"), res.screened)
    io.write_matrix(os.path.join(out, "values.csv"), res.values)
    io.write_indices(os.path.join(out, "active.csv"), res.exposure_active)
    io.write_matrix(os.path.join(out, "zhat.csv"), res.zhat)
    stages = {"screen": ["screened.csv"], "fit-exposure": ["values.csv", "active.csv"],
              "predict": ["zhat.csv"], "fit-outcome": _write_outcome(out, "", res.outcome, cfg),
              "test": ["test.json"]}
    report = {"seed": cfg.seed, "config_hash": cfg.digest(), **res.test.to_dict(),
              "level": cfg.level, "reject": res.test.reject(cfg.level)}
    io.write_json(os.path.join(out, "test.json"), report)
    files = [f for group in stages.values() for f in group]
    _finish(out, "fit", cfg, files, stages)
    return EXIT_OK


def cmd_test(args) -> int:
    cfg = build_config(args)
    Y, X, grid = io.read_vector(args.y), io.read_matrix(args.x), io.read_grid(args.grid)
    Zuse = io.read_matrix(args.observed_z if args.observed_z else args.zhat)
    gram = gram_matrix(cfg.kernel_spec(grid.ndim), grid)
    fit = pipeline.fit_outcome_stage(Y, X, Zuse, grid, cfg, gram)
    res = inference.test_from_fit(Y, X, Zuse, fit, gram, grid, cfg.sigma2_source)
    report = {"seed": cfg.seed, "config_hash": cfg.digest(), **res.to_dict(), "level": cfg.level,
              "reject": res.reject(cfg.level), "active_set": [i + 1 for i in fit.active_set],
              "observed_z": bool(args.observed_z)}
    _emit(args.out, "test.json", report, cfg, "test")
    return EXIT_OK


def cmd_check_iv(args) -> int:
    cfg = build_config(args)
    gamma = io.read_vector(args.gamma)
    cmat = io.read_matrix(args.loadings)
    if cmat.shape[0] != len(gamma) and cmat.shape[1] == len(gamma):
        cmat = cmat.T
    report = ivcheck.check_identifiability(ivcheck.IvProblem(gamma, cmat, args.u, args.rank_tol))
    d = report.to_dict()
    d["max_invalid"] = ivcheck.corollary_max_invalid(*cmat.shape) if cmat.shape[0] >= cmat.shape[1] else None
    _emit(args.out, "iv_report.json", d, cfg, "check-iv")
    return EXIT_OK


def _emit(outdir, name, report, cfg, command):
    if outdir:
        out = _outdir(outdir)
        io.write_json(os.path.join(out, name), report)
        _finish(out, command, cfg, [name])
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True, default=io._json_default)
        sys.stdout.write("\n")


TABLE1_COLUMNS = ("FZ_Z", "FN_Z", "FZ_Y", "FN_Y", "MSE_B", "MSE_beta", "PMSE_Y")
TABLE2_COLUMNS = ("MSE_C1", "MSE_C2", "MSE_C3", "MSE_C4", "MSE_C5", "PMSE_Z")


def _cells(agg, names, prefix=""):
    row = {}
    for c in names:
        a = agg.get(prefix + c)
        row[f"{c}_mean"] = "" if a is None else f"{a.mean:.6g}"
        row[f"{c}_sd"] = "" if a is None else f"{a.sd:.6g}"
    return row


def _write_csv(path, rows):
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def cmd_benchmark(args) -> int:
    cfg = build_config(args)
    out = _outdir(args.out)
    head = {"design": cfg.design, "n": cfg.n, "p": cfg.p, "rho1": cfg.rho1, "rho2": cfg.rho2,
            "reps": cfg.reps}
    rows, reps_all = [], []
    if args.table:
        if cfg.design == "example4_power":
            raise ConfigError("tables use example1_1d or example2_2d")
        reps = pipeline.run_replicates("table", cfg)
        reps_all = reps
        agg = metrics.mc_aggregate(reps)
        if args.table == 1:
            for method in ("FLSEM", "PFLM"):
                rows.append({**head, "method": method,
                             **_cells(agg, TABLE1_COLUMNS, method + "_")})
        else:
            rows.append({**head, "method": "FLSEM", **_cells(agg, TABLE2_COLUMNS)})
    elif args.figure:
        base = replace(cfg, design="example4_power")
        for b in args.signals or datagen.POWER_SIGNALS:
            reps = pipeline.run_replicates("power", replace(base, b=float(b)))
            reps_all += [{"b": b, **r} for r in reps]
            agg = metrics.mc_aggregate(reps)
            rows.append({**head, "design": "example4_power", "b": b, "level": cfg.level,
                         "rejection": f"{agg['reject'].mean:.6g}",
                         "naive_rejection": f"{agg['naive_reject'].mean:.6g}"})
    else:
        reps = pipeline.run_replicates("dc", cfg)
        reps_all = reps
        agg = metrics.mc_aggregate(reps)
        for method in ("full", "dc"):
            rows.append({**head, "method": method, "dc_blocks": cfg.dc_blocks,
                         **_cells(agg, ("MSE_B", "MSE_beta", "PMSE_Y", "FZ_Y", "FN_Y"),
                                  method + "_")})
    _write_csv(os.path.join(out, "summary.csv"), rows)
    _write_csv(os.path.join(out, "replicates.csv"), reps_all)
    _finish(out, "benchmark", cfg, ["summary.csv", "replicates.csv"])
    with open(os.path.join(out, "summary.csv")) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _defaults_epilog() -> str:
    lines = ["configuration keys (--config file or --set KEY=VALUE) and defaults:"]
    for k, v in RunConfig.__dataclass_fields__.items():
        lines.append(f"  {k} = {v.default}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    epilog = _defaults_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    ap = argparse.ArgumentParser(prog="flsem", description=__doc__.splitlines()[0],
                                 epilog=epilog, formatter_class=fmt)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        return sub.add_parser(name, epilog=epilog, formatter_class=fmt, **kw)

    p = add_parser("simulate", help="generate a simulation dataset")
    _common(p)
    _add_flags(p, SIM_FLAGS)
    p.add_argument("--full-grid", dest="cfg_full_grid", action="store_const", const=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = add_parser("screen", help="marginal and distance-correlation screening")
    _common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--z", required=True)
    _add_flags(p, {"k-y": "k_y", "k-z": "k_z"})
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_screen)

    p = add_parser("fit-exposure", help="sparse function-on-scalar exposure fit")
    _common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--grid", required=True)
    _add_flags(p, {**EXPOSURE_FLAGS, **KERNEL_FLAGS})
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_exposure)

    p = add_parser("fit-outcome", help="sparse partial functional outcome fit")
    _common(p)
    p.add_argument("--y", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--zhat", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--baseline-z", help="also fit the observed-curve baseline on this Z")
    p.add_argument("--split", dest="cfg_split", action="store_const", const=True,
                   help="use only the second half of the rows")
    _add_flags(p, {**OUTCOME_FLAGS, **KERNEL_FLAGS})
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_outcome)

    p = add_parser("fit", help="screen, exposure, outcome and test in one run")
    _common(p)
    p.add_argument("--data", required=True, help="directory with X.csv Z.csv Y.csv grid.csv")
    p.add_argument("--split", dest="cfg_split", action="store_const", const=True)
    _add_flags(p, {**EXPOSURE_FLAGS, **OUTCOME_FLAGS, **KERNEL_FLAGS, "screen": "screen",
                   "level": "level"})
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = add_parser("test", help="nullity test for the functional effect")
    _common(p)
    p.add_argument("--y", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--zhat", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--observed-z", help="test with observed curves instead of Zhat")
    _add_flags(p, {**OUTCOME_FLAGS, **KERNEL_FLAGS, "level": "level"})
    p.add_argument("--out")
    p.set_defaults(func=cmd_test)

    p = add_parser("check-iv", help="identifiability under invalid instruments")
    _common(p)
    p.add_argument("--gamma", required=True)
    p.add_argument("--loadings", required=True, help="L x R matrix (R x L is transposed)")
    p.add_argument("--u", type=int, required=True)
    p.add_argument("--rank-tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_iv)

    p = add_parser("benchmark", help="Monte Carlo tables")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--table", type=int, choices=(1, 2))
    g.add_argument("--figure", type=int, choices=(3,))
    g.add_argument("--dc", action="store_true", help="divide-and-conquer comparison")
    p.add_argument("--signals", type=float, nargs="+", help="signal scales for --figure 3")
    _add_flags(p, {**SIM_FLAGS, **EXPOSURE_FLAGS, **KERNEL_FLAGS, "reps": "reps",
                   "jy": "j_y", "lambda": "lam", "level": "level"})
    p.add_argument("--full-grid", dest="cfg_full_grid", action="store_const", const=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ivcheck.GuardExceeded as exc:
        log.error("%s", exc)
        return EXIT_GUARD
    except pipeline.StageError as exc:
        log.error("stage %s failed: %s", exc.stage, exc.cause)
        return EXIT_NUMERICAL if isinstance(exc.cause, np.linalg.LinAlgError) else EXIT_INVALID
    except np.linalg.LinAlgError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
