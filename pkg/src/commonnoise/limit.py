"""Stochastic limit on a fixed Brownian path.

The limit CDF is ``G(t, x) = R(t, x - Gamma(t))`` with
``Gamma(t) = int_0^t gamma(t, G(t)) dW``.  Given a candidate path, the map
``phi_map`` recomputes ``Gamma`` with the left-point Ito sum and shifts the
PDE solution accordingly; the limit is its fixed point, found by Picard
iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError, NonConvergenceError, TruncationOverflowError
from .io import write_csv, write_rows
from .measures import BOUNDARY_MASS_TOL, GridCdf, interp_uniform, lost_mass, repair_monotone
from .noise import brownian_path, refine_increments
from .testfns import bump_family

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedPointConfig:
    tol: float = 1e-8
    max_iter: int = 30

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class LimitPath:
    """``values[j]`` is ``G(times[j], .)`` on the grid; ``gamma_integral[j]`` is ``Gamma(times[j])``."""

    times: np.ndarray
    x_min: float
    x_max: float
    values: np.ndarray = field(repr=False)
    gamma_integral: np.ndarray = field(default=None)
    gamma_values: np.ndarray = field(default=None, repr=False)
    log: tuple = ()

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.m - 1)

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.m)

    @property
    def iterations(self):
        return len(self.log)

    def slice(self, j):
        return GridCdf(self.x_min, self.x_max, self.values[j])

    def evaluate(self, t, x):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9:
            raise DomainError(f"t={t} is not on the path's time grid")
        return interp_uniform(self.values[j], self.x_min, self.dx, x)

    def decay_ratio(self):
        """Geometric ratio fitted to the positive entries of the iteration log."""
        d = np.asarray(self.log, dtype=float)
        k = np.flatnonzero(d > 0)
        if k.size < 2:
            return 0.0
        slope = np.polyfit(k, np.log(d[k]), 1)[0]
        return float(np.exp(slope))

    def export(self, outdir, slice_times=None):
        write_rows(f"{outdir}/iteration_log.csv", ["iter", "sup_W1"], [(i + 1, d) for i, d in enumerate(self.log)])
        write_csv(f"{outdir}/limit_gamma.csv", ["t", "gamma_integral"], [self.times, self.gamma_integral])
        idx = [0, len(self.times) - 1] if slice_times is None else [
            int(np.argmin(np.abs(self.times - t))) for t in slice_times]
        for k, j in enumerate(idx):
            write_csv(f"{outdir}/limit_slice_{k:03d}.csv", ["x", "G"], [self.x, self.values[j]])

    @classmethod
    def from_function(cls, cdf, times, x_min, x_max, m, gamma_integral=None):
        """Path filled from a closed form ``cdf(t, x)`` (used as an oracle)."""
        times = np.asarray(times, dtype=float)
        x = np.linspace(x_min, x_max, m)
        vals = repair_monotone(np.array([cdf(t, x) for t in times]))
        gi = np.zeros(times.size) if gamma_integral is None else np.asarray(gamma_integral, dtype=float)
        return cls(times, x_min, x_max, vals, gi)


def shifted_rows(R_rows, x_min, x_max, shifts, tol=BOUNDARY_MASS_TOL):
    """Translate row ``j`` of ``R_rows`` by ``shifts[j]`` on the fixed grid."""
    shifts = np.asarray(shifts, dtype=float)
    lost = lost_mass(R_rows, x_min, x_max, shifts)
    if np.max(lost) > tol:
        j = int(np.argmax(lost))
        raise TruncationOverflowError(
            f"shift {shifts[j]:.6g} at time index {j} moves mass {lost[j]:.3g} outside "
            f"[{x_min:.6g}, {x_max:.6g}]; enlarge the domain",
            lost_mass=float(lost[j]),
        )
    m = R_rows.shape[1]
    x = np.linspace(x_min, x_max, m)
    dx = (x_max - x_min) / (m - 1)
    out = interp_uniform(R_rows, x_min, dx, x[None, :] - shifts[:, None])
    # unshifted rows are copied so that gamma = 0 reproduces R exactly
    still = shifts == 0.0
    out[still] = R_rows[still]
    return repair_monotone(out)


def _rows(R, times):
    if R.values.shape[0] == len(times) and np.allclose(R.times, times, atol=1e-12, rtol=0):
        return R.values
    return R.on_times(times)


def path_from_shift(R, times, shifts, gamma_values=None, log=()):
    rows = _rows(R, times)
    return LimitPath(np.asarray(times, float), R.x_min, R.x_max,
                     shifted_rows(rows, R.x_min, R.x_max, shifts),
                     np.asarray(shifts, float), gamma_values, tuple(log))


def phi_map(candidate, R, gamma, dW):
    """One application of the fixed-point map.

    ``Gamma_new[j+1] = Gamma_new[j] + gamma(t_j, candidate(t_j)) * dW[j]``,
    then ``G_new(t_j) = R(t_j, . - Gamma_new[j])``.
    """
    dW = np.asarray(dW, dtype=float)
    times = candidate.times
    if dW.size != times.size - 1:
        raise DomainError("noise increments do not match the candidate's time grid")
    g = gamma.eval_rows(times[:-1], candidate.values[:-1], candidate.x_min, candidate.x_max)
    new_shift = np.concatenate([[0.0], np.cumsum(g * dW)])
    return path_from_shift(R, times, new_shift, gamma_values=g)


def sup_w1(a, b):
    """``max_j int |a_j - b_j| dx`` between two paths on the same grid."""
    return float(np.max(trapezoid(np.abs(a.values - b.values), dx=a.dx, axis=1)))


def fixed_point_solve(R, gamma, dW, cfg=None, times=None, initial_shift=None):
    """Picard iteration from the candidate ``R(t, . - initial_shift(t))``.

    The default candidate has zero shift, i.e. the law without common noise.
    Stops when the sup-in-time grid W1 distance between successive iterates
    falls below ``cfg.tol``.
    """
    cfg = cfg or FixedPointConfig()
    dW = np.asarray(dW, dtype=float)
    if times is None:
        times = np.linspace(R.times[0], R.times[-1], dW.size + 1)
    times = np.asarray(times, dtype=float)
    shift0 = np.zeros(times.size) if initial_shift is None else np.asarray(initial_shift, dtype=float)
    cand = path_from_shift(R, times, shift0)
    dists = []
    for k in range(cfg.max_iter):
        new = phi_map(cand, R, gamma, dW)
        d = sup_w1(new, cand)
        dists.append(d)
        log.debug("fixed point iteration %d: sup W1 = %.3e", k + 1, d)
        cand = new
        if d < cfg.tol:
            return LimitPath(cand.times, cand.x_min, cand.x_max, cand.values,
                             cand.gamma_integral, cand.gamma_values, tuple(dists))
    raise NonConvergenceError(
        f"no convergence after {cfg.max_iter} iterations (last sup W1 = {dists[-1]:.3e})", log=dists)


def spde_weak_defects(path, coef, gamma, dW, test_fns, scheme="ito"):
    """Weak-form defect of the SPDE for each test function ``phi``:

        dG = [-B(G)_x + Sigma(G)_xx + gamma^2 G_xx / 2] dt - gamma G_x dW.

    All derivatives sit on ``phi``; the defect is ``int G(T) phi - int G(0) phi``
    minus the left-point sums of
    ``int (B(G) phi' + Sigma(G) phi'' + gamma^2 G phi'' / 2) dx dt`` and
    ``gamma int G phi' dx dW``.

    ``scheme="milstein"`` adds ``gamma^2 int G phi'' dx (dW^2 - dt) / 2`` per
    step, the next term of the Ito-Taylor expansion.  The plain sum leaves a
    pathwise O(sqrt(dt)) martingale remainder; the corrected one is O(dt).
    """
    if scheme not in ("ito", "milstein"):
        raise DomainError(f"unknown scheme {scheme!r}")
    for phi in test_fns:
        phi.check_inside(path.x_min, path.x_max)
    dW = np.asarray(dW, dtype=float)
    times = path.times
    if dW.size != times.size - 1:
        raise DomainError("noise increments do not match the path's time grid")
    dts = np.diff(times)
    x = path.x
    G = path.values
    g = gamma.eval_rows(times[:-1], G[:-1], path.x_min, path.x_max)
    BG, SG = coef.B(G[:-1]), coef.Sigma(G[:-1])
    out = []
    for phi in test_fns:
        p0, p1, p2 = phi(x), phi.d1(x), phi.d2(x)
        lhs = trapezoid(G[-1] * p0, x) - trapezoid(G[0] * p0, x)
        Gp2 = trapezoid(G[:-1] * p2, x, axis=1)
        drift = trapezoid(BG * p1 + SG * p2, x, axis=1) + 0.5 * g**2 * Gp2
        noise = g * trapezoid(G[:-1] * p1, x, axis=1)
        rhs = np.dot(drift, dts) + np.dot(noise, dW)
        if scheme == "milstein":
            rhs += np.dot(0.5 * g**2 * Gp2, dW**2 - dts)
        out.append(lhs - rhs)
    return np.array(out)


def spde_weak_residual(path, coef, gamma, dW, test_fns, scheme="ito"):
    """Largest absolute weak-form defect over ``test_fns``; see :func:`spde_weak_defects`."""
    return float(np.max(np.abs(spde_weak_defects(path, coef, gamma, dW, test_fns, scheme))))


def closed_form_limit(coef, law):
    """``G(t, x)`` for constant ``b``, ``sigma``, ``gamma`` and a Gaussian law.

    Returns ``cdf(t, x, W_t)``; the solution is a Gaussian with mean
    ``mean + b t + c W_t`` and variance ``sd^2 + sigma^2 t``.
    """
    if coef.b.kind != "constant" or coef.sigma.kind != "constant":
        raise DomainError("closed form needs constant b and sigma")
    if coef.gamma.kind not in ("zero", "constant") or law.kind != "gaussian":
        raise DomainError("closed form needs constant gamma and a Gaussian initial law")
    b0, s0, c = coef.b.params[0], coef.sigma.params[0], coef.gamma.value

    def cdf(t, x, w):
        return ndtr((x - law.mean - b0 * t - c * w) / np.sqrt(law.sd**2 + s0**2 * t))

    return cdf


def refinement_study(coef, law, dW, T, x_min, x_max, m, levels=3, n_test=5, seed=0,
                     source="closed-form", scheme="milstein", fp_cfg=None):
    """Residuals under simultaneous halving of ``dx`` and ``dt``.

    Level 0 uses ``dW`` (step ``T / len(dW)``) and ``m`` nodes; each further
    level refines the Brownian path by bridge sampling and uses ``2 m - 1``
    nodes.  Returns one dict per level.
    """
    from .pme import PmeGrid, solve_pme

    lo = float(law.quantile(1e-3))
    hi = float(law.quantile(1 - 1e-3)) + coef.max_b * T
    fns = bump_family(n_test, lo, hi)
    dW = np.asarray(dW, dtype=float)
    rows = []
    for lev in range(levels):
        dt = T / dW.size
        times = np.linspace(0.0, T, dW.size + 1)
        W = brownian_path(dW)
        if source == "closed-form":
            cdf = closed_form_limit(coef, law)
            wmap = dict(zip(times.tolist(), W.tolist()))
            path = LimitPath.from_function(lambda t, x: cdf(t, x, wmap[t]), times, x_min, x_max, m,
                                           coef.gamma.value * W)
        elif source == "numeric":
            sol = solve_pme(law.grid_cdf(x_min, x_max, m), coef, PmeGrid(x_min, x_max, m, T, snapshot_dt=dt))
            path = fixed_point_solve(sol, coef.gamma, dW, fp_cfg)
        else:
            raise DomainError(f"unknown residual source {source!r}")
        defects = spde_weak_defects(path, coef, coef.gamma, dW, fns, scheme)
        rows.append({"level": lev, "dt": dt, "dx": (x_max - x_min) / (m - 1), "m": m,
                     "residual": float(np.max(np.abs(defects))), "defects": defects.tolist()})
        dW = refine_increments(dW, dt, seed, lev + 1)
        m = 2 * m - 1
    return rows


class CommonNoiseLimit(BaseEstimator):
    """Estimator wrapper around :func:`fixed_point_solve`.

    ``fit(R, dW)`` takes a PDE solution and the common-noise increments;
    ``predict`` evaluates ``G(t, x)`` at rows ``(t, x)`` on the path's time grid.
    """

    def __init__(self, gamma=None, tol=1e-8, max_iter=30):
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, R, dW, initial_shift=None):
        path = fixed_point_solve(R, self.gamma, dW, FixedPointConfig(self.tol, self.max_iter),
                                 initial_shift=initial_shift)
        self.path_ = path
        self.n_iter_ = path.iterations
        self.decay_log_ = list(path.log)
        return self

    def predict(self, X):
        check_is_fitted(self, "path_")
        X = check_array(X, ensure_min_features=2)
        return np.array([float(self.path_.evaluate(t, x)) for t, x in X[:, :2]])
