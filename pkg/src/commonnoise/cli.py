"""Command-line entry point.

    commonnoise <experiment> [--config FILE] [--out DIR] [--seed N] [--workers K] [--quiet]

Artifacts are written to a temporary directory next to ``--out`` and moved
into place only when the experiment succeeds.  ``manifest.json`` is written
to ``--out`` in every case.  The output directory may also be given through
the ``COMMONNOISE_OUT`` environment variable.

Exit codes: 0 success, 2 invalid input, 3 numerical blowup, 4 fixed point
did not converge.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import EXPERIMENTS, load_config, parse_config
from .exceptions import (CflError, ConfigError, ContractViolation, DomainError, NonConvergenceError,
                         NumericalBlowupError, SpecError, TruncationOverflowError)
from .harness import run_convergence
from .io import write_json, write_rows
from .limit import FixedPointConfig, fixed_point_solve, refinement_study
from .noise import brownian_path, common_increments
from .particles import SimConfig, simulate
from .pme import PmeGrid, default_domain, solve_pme

log = logging.getLogger("commonnoise")

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP, EXIT_NONCONVERGENCE = 0, 2, 3, 4
AUTO_DX = 0.005

_INVALID = (ConfigError, SpecError, DomainError, CflError, TruncationOverflowError, ContractViolation)


def _domain(cfg, T):
    g = cfg.section("grid")
    if g["x_min"] is not None:
        x_min, x_max = g["x_min"], g["x_max"]
    else:
        x_min, x_max = default_domain(cfg.initial_law, cfg.coefficients, T, g["boundary_mass_tol"])
    m = g["m"] or int(math.ceil((x_max - x_min) / AUTO_DX)) + 1
    return x_min, x_max, m


def _slice_times(cfg, T):
    st = cfg.section("export")["slice_times"]
    if st is None:
        return [0.0, T / 4, T / 2, 3 * T / 4, T]
    if any(t > T for t in st):
        raise DomainError(f"export.slice_times must lie in [0, {T}]")
    return st


def _pme(cfg, T, snapshot_dt):
    x_min, x_max, m = _domain(cfg, T)
    g = cfg.section("grid")
    grid = PmeGrid(x_min, x_max, m, T, snapshot_dt=snapshot_dt, cfl_safety=g["cfl_safety"])
    R0 = cfg.initial_law.grid_cdf(x_min, x_max, m, g["boundary_mass_tol"])
    return solve_pme(R0, cfg.coefficients, grid)


def run_solve_pme(cfg, out, workers):
    sol = _pme(cfg, cfg.T, cfg.section("grid")["snapshot_dt"])
    sol.export(out, _slice_times(cfg, cfg.T))
    return {"C_star": sol.C_star, "m": sol.m}


def run_simulate(cfg, out, workers):
    sc = cfg.section("simulate")
    sim = SimConfig(n=sc["n"], coefficients=cfg.coefficients, initial=cfg.initial_law, T=cfg.T, dt=cfg.dt,
                    seed=cfg.seed, keep_positions=sc["dump_positions"])
    traj = simulate(sim)
    traj.to_csv(out / "trajectory.csv")
    if sc["dump_positions"]:
        traj.dump_positions(out / "positions.bin")
    return {"lineage": traj.lineage}


def _limit(cfg, T, dt, seed):
    steps = max(1, round(T / dt))
    dt = T / steps
    sol = _pme(cfg, T, dt)
    dW = common_increments(seed, steps, dt)
    fp = cfg.section("fixed_point")
    shift0 = None
    if fp["initial_shift"] == "brownian":
        shift0 = cfg.coefficients.gamma.bound * brownian_path(dW)
    path = fixed_point_solve(sol, cfg.coefficients.gamma, dW, FixedPointConfig(fp["tol"], fp["max_iter"]),
                             initial_shift=shift0)
    return sol, path


def run_fixed_point(cfg, out, workers):
    sol, path = _limit(cfg, cfg.T, cfg.dt, cfg.seed)
    path.export(out, _slice_times(cfg, cfg.T))
    write_json(out / "fixed_point_summary.json", {
        "iterations": path.iterations,
        "sup_w1_log": list(path.log),
        "fitted_ratio": path.decay_ratio(),
        "C_star": sol.C_star,
        "grid": {"x_min": sol.x_min, "x_max": sol.x_max, "m": sol.m},
    })
    return {"iterations": path.iterations, "decay_log": list(path.log)}


def run_converge(cfg, out, workers):
    cv, fp = cfg.section("converge"), cfg.section("fixed_point")
    x_min, x_max, m = _domain(cfg, cv["T"])
    report = run_convergence(cfg.coefficients, cfg.initial_law, T=cv["T"], dt=cfg.dt, n_values=cv["n_values"],
                             replicas=cv["replicas"], seed=cfg.seed, m=m, x_min=x_min, x_max=x_max,
                             fp_cfg=FixedPointConfig(fp["tol"], fp["max_iter"]), workers=workers)
    report.write(out)
    return {"timings_ms": [[r.n, r.replica, r.wall_ms] for r in report.rows], "slope": report.slope}


def run_spde_residual(cfg, out, workers):
    rs, fp = cfg.section("residual"), cfg.section("fixed_point")
    steps = max(1, round(cfg.T / rs["base_dt"]))
    dW = common_increments(cfg.seed, steps, cfg.T / steps)
    rows = refinement_study(cfg.coefficients, cfg.initial_law, dW, cfg.T, rs["x_min"], rs["x_max"], rs["base_m"],
                            levels=rs["levels"], n_test=rs["n_test"], seed=cfg.seed, source=rs["source"],
                            scheme=rs["scheme"], fp_cfg=FixedPointConfig(fp["tol"], fp["max_iter"]))
    res = [r["residual"] for r in rows]
    ratios = [a / b if b > 0 else float("inf") for a, b in zip(res, res[1:])]
    write_rows(out / "residual.csv", ["level", "dt", "dx", "m", "residual"],
               [(r["level"], r["dt"], r["dx"], r["m"], r["residual"]) for r in rows])
    write_rows(out / "residual_defects.csv", ["level", "test_function", "defect"],
               [(r["level"], k, d) for r in rows for k, d in enumerate(r["defects"])])
    write_json(out / "residual_summary.json", {"residuals": res, "ratios": ratios,
                                               "source": rs["source"], "scheme": rs["scheme"]})
    return {"ratios": ratios}


RUNNERS = {
    "solve-pme": run_solve_pme,
    "simulate": run_simulate,
    "fixed-point": run_fixed_point,
    "converge": run_converge,
    "spde-residual": run_spde_residual,
}


def _versions():
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for dist in ("artifact", "scipy", "scikit-learn", "joblib", "PyYAML"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _lineage(seed):
    return {
        "seed": seed,
        "generator": "Philox4x64, key = SeedSequence([seed_lo, seed_hi, stream_tag, ...])",
        "streams": {"common": "tag 1", "idiosyncratic": "tag 2, counter block = particle index",
                    "initial": "tag 3, counter block = particle index", "bridge": "tag 4, refinement level",
                    "replica": "tag 5, replica index -> derived seed"},
    }


def _publish(tmp, out):
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(tmp.iterdir()):
        os.replace(f, out / f.name)


def run(cfg, out, workers=1):
    """Run ``cfg`` writing artifacts to ``out``; returns the exit code."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    manifest = {"experiment": cfg.experiment, "config_sha256": cfg.sha256(), "config": cfg.data,
                "seed_lineage": _lineage(cfg.seed), "versions": _versions(), "workers": workers,
                "started_utc": started}
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    code = EXIT_OK
    try:
        info = RUNNERS[cfg.experiment](cfg, tmp, workers)
        _publish(tmp, out)
        manifest.update(status="ok", result=info)
    except NonConvergenceError as exc:
        code = EXIT_NONCONVERGENCE
        manifest.update(status="nonconvergence", error=str(exc), decay_log=list(exc.log))
    except (NumericalBlowupError, FloatingPointError) as exc:
        code = EXIT_BLOWUP
        manifest.update(status="blowup", error=str(exc))
    except _INVALID as exc:
        code = EXIT_INVALID
        manifest.update(status="invalid", error=str(exc))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
        manifest["wall_time_s"] = time.perf_counter() - t0
        manifest["exit_code"] = code
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", manifest)
    if code:
        log.error("%s: %s", manifest["status"], manifest["error"])
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="commonnoise", description="Rank-based particles with common noise.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="YAML config file; all keys optional")
    p.add_argument("--out", help="output directory (default: $COMMONNOISE_OUT or ./out)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or os.environ.get("COMMONNOISE_OUT") or "out")
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment)
        else:
            cfg = parse_config("", args.experiment)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", {"experiment": args.experiment, "status": "invalid",
                                           "errors": exc.errors, "exit_code": EXIT_INVALID})
        return EXIT_INVALID
    if args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg, out, args.workers)


if __name__ == "__main__":
    sys.exit(main())
