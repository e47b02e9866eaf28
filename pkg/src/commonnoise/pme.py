"""Explicit monotone finite differences for the porous medium equation

    R_t = -B(R)_x + Sigma(R)_xx,      R(0, .) = F_lambda,

with Dirichlet data ``R = 0`` at ``x_min`` and ``R = 1`` at ``x_max``.  The
convective flux uses the left (upwind) difference, valid for ``b >= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .coefficients import CoefficientSpec, InitialLaw
from .exceptions import CflError, DomainError, NumericalBlowupError
from .io import write_csv, write_json
from .measures import BOUNDARY_MASS_TOL, GridCdf, interp_uniform, repair_monotone

CFL_SAFETY = 0.9
DEFAULT_SNAPSHOTS = 100


def stability_numbers(coef, dx, dt):
    """(advective, diffusive) parts of the monotonicity bound; their sum must be <= 1."""
    return coef.max_b * dt / dx, 2.0 * coef.max_diffusivity * dt / dx**2


def cfl_dt(coef, dx, safety=CFL_SAFETY):
    rate = coef.max_b / dx + 2.0 * coef.max_diffusivity / dx**2
    return math.inf if rate == 0 else safety / rate


def default_domain(law, coef, T, tol=BOUNDARY_MASS_TOL):
    """Truncated domain wide enough for drift, diffusion and common-noise shifts."""
    lo, hi = law.support(tol)
    s2 = 2.0 * coef.max_diffusivity
    margin = coef.max_b * T + 6.0 * math.sqrt(s2 * T) + coef.gamma.bound * 6.0 * math.sqrt(T)
    return lo - margin, hi + margin


@dataclass(frozen=True)
class PmeGrid:
    x_min: float
    x_max: float
    m: int
    T: float
    snapshot_dt: float | None = None
    dt_pde: float | None = None
    cfl_safety: float = CFL_SAFETY

    def __post_init__(self):
        if self.m < 3:
            raise DomainError("need at least 3 grid nodes")
        if not self.x_max > self.x_min:
            raise DomainError("x_max must exceed x_min")
        if not self.T >= 0:
            raise DomainError("T must be nonnegative")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.m - 1)

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.m)

    def schedule(self, coef):
        """(snapshot count, substeps per snapshot, dt_pde)."""
        if self.T == 0:
            return 0, 0, 0.0
        snap = self.snapshot_dt or self.T / DEFAULT_SNAPSHOTS
        K = max(1, round(self.T / snap))
        snap = self.T / K
        if self.dt_pde is None:
            sub = max(1, math.ceil(snap / cfl_dt(coef, self.dx, self.cfl_safety) - 1e-9))
        else:
            adv, dif = stability_numbers(coef, self.dx, self.dt_pde)
            if adv + dif > 1.0:
                raise CflError(
                    f"dt_pde={self.dt_pde:.3g} violates the stability bound "
                    f"(advective {adv:.3g} + diffusive {dif:.3g} > 1)"
                )
            sub = max(1, math.ceil(snap / self.dt_pde - 1e-9))
        return K, sub, snap / sub


@dataclass(frozen=True, eq=False)
class PmeSolution:
    """Snapshots ``values[k]`` of ``R(times[k], .)`` on the spatial grid."""

    times: np.ndarray
    x_min: float
    x_max: float
    values: np.ndarray = field(repr=False)
    C_star: float = 0.0
    dt_pde: float = 0.0
    substeps: int = 0
    cfl: tuple = (0.0, 0.0)
    max_monotone_violation: float = 0.0

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.m - 1)

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.m)

    def slice(self, k):
        return GridCdf(self.x_min, self.x_max, self.values[k])

    def at(self, t):
        """Grid CDF at time ``t``, linear in time between snapshots."""
        return GridCdf(self.x_min, self.x_max, self._time_interp(t))

    def _time_interp(self, t):
        ts = self.times
        if not (ts[0] - 1e-12 <= t <= ts[-1] + 1e-12):
            raise DomainError(f"t={t} outside solved horizon [{ts[0]}, {ts[-1]}]")
        k = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 1))
        if k == len(ts) - 1 or t <= ts[k]:
            return self.values[k]
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1 - w) * self.values[k] + w * self.values[k + 1]

    def on_times(self, t):
        """Values at each time in ``t`` (rows), interpolating between snapshots."""
        t = np.asarray(t, dtype=float)
        if len(t) == len(self.times) and np.allclose(t, self.times, rtol=0, atol=1e-12):
            return self.values
        return np.array([self._time_interp(tj) for tj in t])

    def evaluate(self, t, x):
        return interp_uniform(self._time_interp(t), self.x_min, self.dx, x)

    @classmethod
    def from_function(cls, cdf, times, x_min, x_max, m):
        """Solution object filled from a closed form ``cdf(t, x)``."""
        times = np.asarray(times, dtype=float)
        x = np.linspace(x_min, x_max, m)
        vals = repair_monotone(np.array([cdf(t, x) for t in times]))
        return cls(times, x_min, x_max, vals, C_star=_max_slope(vals, (x_max - x_min) / (m - 1)))

    def export(self, outdir, slice_times=None):
        slice_times = self.times[[0, -1]] if slice_times is None else slice_times
        names = []
        for k, t in enumerate(slice_times):
            name = f"pme_slice_{k:03d}.csv"
            write_csv(f"{outdir}/{name}", ["x", "R"], [self.x, self._time_interp(t)])
            names.append({"file": name, "t": float(t)})
        write_json(f"{outdir}/pme_summary.json", {
            "grid": {"x_min": self.x_min, "x_max": self.x_max, "m": self.m, "dx": self.dx,
                     "dt_pde": self.dt_pde, "substeps": self.substeps, "snapshots": len(self.times)},
            "C_star": self.C_star,
            "cfl": {"advective": self.cfl[0], "diffusive": self.cfl[1], "total": self.cfl[0] + self.cfl[1]},
            "max_monotone_violation": self.max_monotone_violation,
            "slices": names,
        })


def _max_slope(values, dx):
    return float(np.max(np.abs(np.gradient(values, dx, axis=-1))))


def solve_pme(initial, coef, grid):
    """March the explicit scheme and keep snapshots every ``grid.snapshot_dt``."""
    if not isinstance(initial, GridCdf):
        raise TypeError("initial must be a GridCdf")
    if initial.m != grid.m or not np.isclose(initial.x_min, grid.x_min) or not np.isclose(initial.x_max, grid.x_max):
        raise DomainError("initial CDF does not live on the solver grid")
    K, sub, dt = grid.schedule(coef)
    dx = grid.dx
    lam, mu = dt / dx, dt / dx**2
    R = np.array(initial.values, dtype=float)
    snaps = np.empty((K + 1, grid.m))
    snaps[0] = R
    worst = 0.0
    step = 0
    new = np.empty_like(R)
    for k in range(K):
        for _ in range(sub):
            Bv = coef.B(R)
            Sv = coef.Sigma(R)
            new[1:-1] = R[1:-1] - lam * (Bv[1:-1] - Bv[:-2]) + mu * (Sv[2:] - 2.0 * Sv[1:-1] + Sv[:-2])
            new[0], new[-1] = 0.0, 1.0
            if not np.all(np.isfinite(new)):
                raise NumericalBlowupError(f"non-finite PME value at step {step}", step=step)
            drop = np.max(np.maximum.accumulate(new) - new)
            over = max(new.max() - 1.0, -new.min(), 0.0)
            worst = max(worst, drop, over)
            R = repair_monotone(new)
            step += 1
        snaps[k + 1] = R
    times = np.linspace(0.0, grid.T, K + 1)
    return PmeSolution(
        times, grid.x_min, grid.x_max, snaps,
        C_star=_max_slope(snaps, dx), dt_pde=dt, substeps=sub,
        cfl=stability_numbers(coef, dx, dt) if dt else (0.0, 0.0),
        max_monotone_violation=float(worst),
    )


def density_bound(sol):
    """Largest central-difference slope over all stored slices."""
    return sol.C_star


def pme_weak_residual(sol, coef, test_fns):
    """Max over ``test_fns`` of the defect in

        int R(T) phi - int R(0) phi = int_0^T int B(R) phi' + Sigma(R) phi'' dx dt,

    with the time integral taken as a left-point sum over the stored slices.
    """
    x = sol.x
    for phi in test_fns:
        phi.check_inside(sol.x_min, sol.x_max)
    dts = np.diff(sol.times)
    R = sol.values
    worst = 0.0
    for phi in test_fns:
        p0, p1, p2 = phi(x), phi.d1(x), phi.d2(x)
        lhs = trapezoid(R[-1] * p0, x) - trapezoid(R[0] * p0, x)
        flux = trapezoid(coef.B(R[:-1]) * p1 + coef.Sigma(R[:-1]) * p2, x, axis=1)
        worst = max(worst, abs(lhs - float(np.dot(flux, dts))))
    return worst


class PorousMediumSolver(BaseEstimator):
    """Estimator wrapper: ``fit`` an initial law, ``predict`` ``R`` at ``(t, x)`` pairs."""

    def __init__(self, coefficients=None, x_min=None, x_max=None, m=1601, T=1.0,
                 snapshot_dt=None, dt_pde=None, cfl_safety=CFL_SAFETY):
        self.coefficients = coefficients
        self.x_min = x_min
        self.x_max = x_max
        self.m = m
        self.T = T
        self.snapshot_dt = snapshot_dt
        self.dt_pde = dt_pde
        self.cfl_safety = cfl_safety

    def fit(self, X, y=None):
        """``X`` is an :class:`InitialLaw` or a :class:`GridCdf` on the solver grid."""
        coef = self.coefficients
        if coef is None:
            raise DomainError("coefficients are required")
        if isinstance(X, GridCdf):
            initial = X
            x_min, x_max, m = X.x_min, X.x_max, X.m
        elif isinstance(X, InitialLaw):
            x_min, x_max = self.x_min, self.x_max
            if x_min is None or x_max is None:
                x_min, x_max = default_domain(X, coef, self.T)
            m = self.m
            initial = X.grid_cdf(x_min, x_max, m)
        else:
            raise TypeError("fit expects an InitialLaw or a GridCdf")
        grid = PmeGrid(x_min, x_max, m, self.T, self.snapshot_dt, self.dt_pde, self.cfl_safety)
        self.grid_ = grid
        self.solution_ = solve_pme(initial, coef, grid)
        self.C_star_ = self.solution_.C_star
        return self

    def predict(self, X):
        """``X`` has columns ``(t, x)``; returns ``R(t, x)``."""
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_min_features=2)
        sol = self.solution_
        return np.array([float(sol.evaluate(t, x)) for t, x in X[:, :2]])
