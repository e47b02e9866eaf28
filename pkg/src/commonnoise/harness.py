"""Coupled comparison of particle systems with the limit path.

For each replica a common-noise path is drawn, the limit is solved once on
it, and particle systems of increasing size are driven by the same path.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from joblib import Parallel, delayed

from .exceptions import DomainError
from .io import write_json, write_rows
from .limit import FixedPointConfig, fixed_point_solve
from .measures import EmpiricalMeasure, GridCdf, sup_cdf_gap, w1_empirical_grid
from .noise import common_increments, replica_seed
from .particles import SimConfig, simulate
from .pme import PmeGrid, default_domain, solve_pme

REPORT_HEADER = ["n", "replica", "sup_w1", "sup_cdf", "sup_gamma_gap"]


@dataclass(frozen=True)
class GapRow:
    n: int
    replica: int
    sup_w1: float
    sup_cdf: float
    sup_gamma_gap: float
    rank_cdf_gap: float = 0.0
    triangle_ok: bool = True
    wall_ms: float = 0.0


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    slope: float = float("nan")
    slope_stderr: float = float("nan")
    C_star: float = 0.0
    meta: dict = field(default_factory=dict)

    def mean_gaps(self, attr="sup_w1"):
        ns = sorted({r.n for r in self.rows})
        return np.array(ns), np.array([np.mean([getattr(r, attr) for r in self.rows if r.n == n]) for n in ns])

    def to_csv(self, path):
        write_rows(path, REPORT_HEADER, [(r.n, r.replica, r.sup_w1, r.sup_cdf, r.sup_gamma_gap) for r in self.rows])

    def timings_to_csv(self, path):
        write_rows(path, ["n", "replica", "wall_ms"], [(r.n, r.replica, r.wall_ms) for r in self.rows])

    def summary(self):
        ns, gaps = self.mean_gaps()
        half = 1.96 * self.slope_stderr
        return {
            "n_values": ns.tolist(),
            "mean_sup_w1": gaps.tolist(),
            "mean_sup_cdf": self.mean_gaps("sup_cdf")[1].tolist(),
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "slope_ci95": [self.slope - half, self.slope + half],
            "C_star": self.C_star,
            "triangle_bound_holds": all(r.triangle_ok for r in self.rows),
            **self.meta,
        }

    def write(self, outdir):
        self.to_csv(f"{outdir}/report.csv")
        write_json(f"{outdir}/summary.json", self.summary())


class CoupledGap(NamedTuple):
    sup_w1: float
    sup_cdf: float
    sup_gamma_gap: float
    trajectory: object


def coupled_gap(n, seed, coef, law, limit, T, dt):
    """Gaps between the ``n``-particle system and ``limit`` on the same common noise.

    ``sup_w1`` is ``max_j W1(rho_n(t_j), rho(t_j))``, ``sup_cdf`` is
    ``max_j sup_x |F_n(t_j, x) - R(t_j, x - Gamma(t_j))|`` and
    ``sup_gamma_gap`` is ``max_j |Gamma_n(t_j) - Gamma(t_j)|``.  Both
    integrals use their own ``gamma``: ``gamma(rho_n)`` for the particles and
    ``gamma(rho)`` for the limit.
    """
    cfg = SimConfig(n=n, coefficients=coef, initial=law, T=T, dt=dt, seed=seed)
    if cfg.steps + 1 != len(limit.times) or not np.allclose(cfg.times, limit.times, rtol=0, atol=1e-9):
        raise DomainError("simulation and limit path use different time grids")
    traj = simulate(cfg)
    w1 = cdf = 0.0
    for j in range(len(limit.times)):
        G = limit.slice(j)
        X = EmpiricalMeasure(traj.rank_state[j] + traj.gamma_integral[j])
        w1 = max(w1, w1_empirical_grid(X, G))
        cdf = max(cdf, sup_cdf_gap(X, G))
    ggap = float(np.max(np.abs(traj.gamma_integral - limit.gamma_integral)))
    return CoupledGap(w1, cdf, ggap, traj)


def _rank_gap(traj, R_rows, x_min, x_max):
    # sup_t sup_x |F_Y(t, x) - R(t, x)| for the rank-based system Y = X - Gamma_n
    worst = 0.0
    for j in range(R_rows.shape[0]):
        worst = max(worst, sup_cdf_gap(EmpiricalMeasure(traj.rank_state[j]), GridCdf(x_min, x_max, R_rows[j])))
    return worst


def _replica(r, seed, coef, law, sol, T, dt, n_values, fp_cfg):
    s = replica_seed(seed, r)
    steps = round(T / dt)
    dW = common_increments(s, steps, dt)
    limit = fixed_point_solve(sol, coef.gamma, dW, fp_cfg)
    R_rows = sol.on_times(limit.times)
    slack = np.max(np.abs(np.diff(R_rows, axis=1)))
    rows = []
    for n in n_values:
        t0 = time.perf_counter()
        w1, cdf, ggap, traj = coupled_gap(n, s, coef, law, limit, T, dt)
        rank = _rank_gap(traj, R_rows, sol.x_min, sol.x_max)
        bound = rank + sol.C_star * ggap + slack + 1e-12
        ms = (time.perf_counter() - t0) * 1e3
        rows.append(GapRow(n, r, w1, cdf, ggap, rank, bool(cdf <= bound), ms))
    return rows


def run_convergence(coef, law, T=0.5, dt=1e-3, n_values=(100, 400, 1600, 6400), replicas=20,
                    seed=42, m=None, x_min=None, x_max=None, fp_cfg=None, workers=1):
    """Run every replica at every ``n``; replicas run in parallel with ``workers``."""
    n_values = [int(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise DomainError("n values must be strictly increasing")
    if x_min is None or x_max is None:
        x_min, x_max = default_domain(law, coef, T)
    if m is None:
        m = int(math.ceil((x_max - x_min) / 0.005)) + 1
    sol = solve_pme(law.grid_cdf(x_min, x_max, m), coef, PmeGrid(x_min, x_max, m, T, snapshot_dt=dt))
    fp_cfg = fp_cfg or FixedPointConfig()
    jobs = Parallel(n_jobs=workers)(
        delayed(_replica)(r, seed, coef, law, sol, T, dt, n_values, fp_cfg) for r in range(replicas)
    )
    rows = sorted((row for rep in jobs for row in rep), key=lambda r: (r.n, r.replica))
    report = ConvergenceReport(rows=rows, C_star=sol.C_star,
                               meta={"T": T, "dt": dt, "replicas": replicas, "seed": seed,
                                     "grid": {"x_min": x_min, "x_max": x_max, "m": m}})
    if len(n_values) >= 3 and replicas >= 5:
        report.slope, report.slope_stderr = rate_fit(rows, with_stderr=True)
    return report


def rate_fit(rows, with_stderr=False, attr="sup_w1"):
    """Least-squares slope of ``log(mean gap)`` against ``log(n)``.

    ``rows`` are :class:`GapRow` objects or ``(n, gap)`` pairs.  Needs at least
    three distinct ``n`` with five replicas each.
    """
    pairs = [(r.n, getattr(r, attr)) if isinstance(r, GapRow) else (r[0], r[1]) for r in rows]
    ns = sorted({int(n) for n, _ in pairs})
    counts = [sum(1 for n, _ in pairs if n == k) for k in ns]
    if len(ns) < 3 or min(counts) < 5:
        raise DomainError("rate fit needs >= 3 distinct n values with >= 5 replicas each")
    means = np.array([np.mean([g for n, g in pairs if n == k]) for k in ns])
    if not np.all(np.isfinite(means)) or np.any(means <= 0):
        raise DomainError("slope undefined: mean gaps must be finite and positive")
    x, y = np.log(ns), np.log(means)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    if not with_stderr:
        return slope
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    stderr = math.sqrt(float(resid @ resid) / dof / float(np.sum((x - x.mean()) ** 2)))
    return slope, stderr
