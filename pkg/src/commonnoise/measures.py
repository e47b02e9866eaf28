"""Probability measures on the real line.

Two representations are used throughout the package:

* :class:`EmpiricalMeasure` -- ``n`` equally weighted atoms, kept sorted.
* :class:`GridCdf` -- a monotone CDF sampled on a uniform grid and linearly
  interpolated between nodes.

CDFs are right-continuous, ``F(x) = #{i : x_i <= x} / n``, so the value of the
empirical CDF at an atom is the rank of that atom (ties included) over ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import DomainError, GridMismatchError, TruncationOverflowError
from .io import read_csv, write_csv

BOUNDARY_MASS_TOL = 1e-6


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform measure on a finite sample, ``(1/n) sum_i delta_{x_i}``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.sort(np.asarray(self.points, dtype=float).ravel())
        if pts.size == 0:
            raise DomainError("an empirical measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise DomainError("atoms must be finite")
        object.__setattr__(self, "points", _readonly(pts))

    @property
    def n(self):
        return self.points.size

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self.points, x, side="right") / self.n

    def quantile(self, u):
        u = _check_levels(u)
        # levels k/n computed exactly as cdf() computes them
        levels = np.arange(1, self.n + 1) / self.n
        k = np.searchsorted(levels, u, side="left")
        return self.points[np.minimum(k, self.n - 1)]

    def shift(self, c):
        return EmpiricalMeasure(self.points + float(c))

    def moment(self, p):
        return float(np.mean(np.abs(self.points) ** p))

    def to_csv(self, path):
        write_csv(path, ["x"], [self.points])

    @classmethod
    def from_csv(cls, path):
        cols = read_csv(path)
        return cls(cols["x"])

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridCdf:
    """CDF values on the uniform grid ``linspace(x_min, x_max, m)``.

    Values are repaired on construction (running maximum, clamp to [0, 1],
    endpoints pinned to 0 and 1).  Construction fails if the raw values are
    far from a CDF: endpoints off by more than ``tol`` or decreasing steps
    larger than ``tol``.
    """

    x_min: float
    x_max: float
    values: np.ndarray
    tol: float = field(default=BOUNDARY_MASS_TOL, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 3:
            raise DomainError("a grid CDF needs at least 3 nodes")
        if not self.x_max > self.x_min:
            raise DomainError("x_max must exceed x_min")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid CDF values must be finite")
        if v[0] > self.tol or v[-1] < 1.0 - self.tol:
            raise DomainError(
                f"grid CDF must run from 0 to 1 (got {v[0]:.3g} .. {v[-1]:.3g}); "
                "widen the domain"
            )
        drop = np.max(np.maximum.accumulate(v) - v)
        if drop > self.tol:
            raise DomainError(f"grid CDF decreases by {drop:.3g}")
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))
        object.__setattr__(self, "values", _readonly(repair_monotone(v)))

    @property
    def m(self):
        return self.values.size

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.m - 1)

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.m)

    def same_grid(self, other):
        return (
            self.m == other.m
            and np.isclose(self.x_min, other.x_min, rtol=0, atol=1e-12 * max(1.0, abs(self.x_min)))
            and np.isclose(self.x_max, other.x_max, rtol=0, atol=1e-12 * max(1.0, abs(self.x_max)))
        )

    def cdf(self, x):
        return interp_uniform(self.values, self.x_min, self.dx, np.asarray(x, dtype=float))

    def quantile(self, u):
        u = _check_levels(u)
        return _piecewise_linear_quantile(self.x, self.values, u)

    def shift(self, c, tol=None):
        tol = self.tol if tol is None else tol
        c = float(c)
        if c == 0.0:
            return self
        lost = lost_mass(self.values, self.x_min, self.x_max, c)
        if lost > tol:
            raise TruncationOverflowError(
                f"shift by {c:.6g} moves mass {lost:.3g} outside "
                f"[{self.x_min:.6g}, {self.x_max:.6g}]",
                lost_mass=lost,
            )
        new = interp_uniform(self.values, self.x_min, self.dx, self.x - c)
        return GridCdf(self.x_min, self.x_max, new, tol=max(tol, self.tol))

    def density(self):
        """Central-difference slope of the CDF (one-sided at the ends)."""
        return np.gradient(self.values, self.dx)

    def to_csv(self, path):
        write_csv(path, ["x", "F"], [self.x, self.values])

    @classmethod
    def from_csv(cls, path, tol=BOUNDARY_MASS_TOL):
        cols = read_csv(path)
        x = cols["x"]
        return cls(x[0], x[-1], cols["F"], tol=tol)

    @classmethod
    def from_function(cls, cdf, x_min, x_max, m, tol=BOUNDARY_MASS_TOL):
        x = np.linspace(x_min, x_max, m)
        return cls(x_min, x_max, cdf(x), tol=tol)

    @classmethod
    def from_empirical(cls, mu, x_min, x_max, m, tol=BOUNDARY_MASS_TOL):
        """Sample the (right-continuous) empirical CDF at the grid nodes."""
        return cls.from_function(mu.cdf, x_min, x_max, m, tol=tol)


def repair_monotone(values):
    """Running maximum followed by clamping to [0, 1], endpoints pinned.

    Works row-wise on 2-D input.
    """
    v = np.clip(np.maximum.accumulate(np.asarray(values, dtype=float), axis=-1), 0.0, 1.0)
    v[..., 0] = 0.0
    v[..., -1] = 1.0
    return v


def interp_uniform(values, x_min, dx, xq):
    """Linear interpolation of grid values at ``xq``; 0 to the left, 1 to the right.

    ``values`` may be 1-D (one CDF) or 2-D with one CDF per row, in which case
    ``xq`` must have the same number of rows.
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[-1]
    s = (np.asarray(xq, dtype=float) - x_min) / dx
    i0 = np.clip(np.floor(s), 0, m - 2).astype(np.intp)
    w = s - i0
    if values.ndim == 1:
        lo, hi = values[i0], values[i0 + 1]
    else:
        lo = np.take_along_axis(values, i0, axis=-1)
        hi = np.take_along_axis(values, i0 + 1, axis=-1)
    out = lo + w * (hi - lo)
    return np.where(s < 0.0, 0.0, np.where(s > m - 1, 1.0, out))


def lost_mass(values, x_min, x_max, c):
    """Mass pushed outside ``[x_min, x_max]`` when a CDF is translated by ``c``.

    With 2-D ``values`` (one CDF per row) ``c`` holds one shift per row.
    """
    values = np.asarray(values, dtype=float)
    dx = (x_max - x_min) / (values.shape[-1] - 1)
    c = np.asarray(c, dtype=float)
    if values.ndim == 1:
        cq = c.reshape(-1)
        right = 1.0 - interp_uniform(values, x_min, dx, x_max - cq)
        left = interp_uniform(values, x_min, dx, x_min - cq)
    else:
        cq = c.reshape(-1, 1)
        right = 1.0 - interp_uniform(values, x_min, dx, x_max - cq)[:, 0]
        left = interp_uniform(values, x_min, dx, x_min - cq)[:, 0]
        cq = cq[:, 0]
    out = np.where(cq > 0, right, np.where(cq < 0, left, 0.0))
    return float(out[0]) if c.ndim == 0 else out.reshape(c.shape)


def _check_levels(u):
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0.0)) or np.any(~(u < 1.0)):
        raise DomainError("quantile levels must lie in the open interval (0, 1)")
    return u


def _piecewise_linear_quantile(x, F, u):
    # inf{x : F(x) >= u} for a piecewise-linear nondecreasing F
    k = np.searchsorted(F, u, side="left")
    k = np.clip(k, 1, len(F) - 1)
    f0, f1 = F[k - 1], F[k]
    span = f1 - f0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (u - f0) / span, 1.0)
    w = np.clip(w, 0.0, 1.0)
    return x[k - 1] + w * (x[k] - x[k - 1])


# -- operations -------------------------------------------------------------

def cdf_eval(mu, x):
    return mu.cdf(x)


def quantile(mu, u):
    return mu.quantile(u)


def shift(mu, c):
    return mu.shift(c)


def wasserstein(mu, nu, p=1.0):
    """W_p distance between two empirical measures.

    Equal sizes use the order-statistics coupling.  Otherwise both quantile
    functions are step functions with jumps at ``k/n1`` and ``k/n2``; on each
    cell of the merged breakpoints they are constant, so the integral of
    ``|Q1 - Q2|^p`` is an exact finite sum.
    """
    p = float(p)
    if not p >= 1.0:
        raise DomainError(f"Wasserstein order must be >= 1, got {p}")
    if mu.n == nu.n:
        d = np.abs(mu.points - nu.points)
        w = None
    else:
        edges = np.union1d(np.arange(1, mu.n + 1) / mu.n, np.arange(1, nu.n + 1) / nu.n)
        edges = np.concatenate([[0.0], edges])
        mid = np.clip(0.5 * (edges[:-1] + edges[1:]), np.finfo(float).tiny, 1.0 - 2**-53)
        d = np.abs(mu.quantile(mid) - nu.quantile(mid))
        w = np.diff(edges)
    if p == 1.0:
        return float(np.mean(d) if w is None else np.dot(w, d))
    dp = d**p
    return float((np.mean(dp) if w is None else np.dot(w, dp)) ** (1.0 / p))


def w1_from_cdfs(f, g):
    """Trapezoidal approximation of the integral of ``|F - G|`` over the grid."""
    if not f.same_grid(g):
        raise GridMismatchError("grid CDFs live on different grids")
    return float(trapezoid(np.abs(f.values - g.values), dx=f.dx))


def w1_empirical_grid(mu, g):
    """Exact integral of ``|F_mu - G|`` where ``G`` is the interpolated grid CDF."""
    xs = np.union1d(g.x, mu.points)
    a, b = xs[:-1], xs[1:]
    h = b - a
    c = mu.cdf(a)
    d0 = g.cdf(a) - c
    d1 = g.cdf(b) - c
    s0, s1 = np.abs(d0), np.abs(d1)
    same = d0 * d1 >= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cross = np.where(s0 + s1 > 0, (d0**2 + d1**2) / (2.0 * (s0 + s1)), 0.0)
    piece = np.where(same, 0.5 * (s0 + s1), cross) * h
    return float(np.sum(piece))


def sup_cdf_gap(mu, g):
    """``sup_x |F_mu(x) - G(x)|``, evaluated at grid nodes and at every atom
    (both one-sided limits), which is where the supremum is attained."""
    at_nodes = np.abs(mu.cdf(g.x) - g.values)
    gp = g.cdf(mu.points)
    right = mu.cdf(mu.points)
    left = np.searchsorted(mu.points, mu.points, side="left") / mu.n
    return float(max(at_nodes.max(), np.abs(right - gp).max(), np.abs(left - gp).max()))


def load_grid_cdf(path):
    return GridCdf.from_csv(Path(path))
