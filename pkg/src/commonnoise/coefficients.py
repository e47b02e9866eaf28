"""Rank coefficients ``b``, ``sigma``, the common-noise intensity ``gamma`` and
the initial law.

``b`` and ``sigma`` are functions on [0, 1] evaluated at the rank of a
particle.  The PDE side needs their antiderivatives

    B(r) = int_0^r b(a) da,        Sigma(r) = int_0^r sigma(a)^2 / 2 da,

in closed form where possible and by quadrature otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad, trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.special import ndtr, ndtri

from .exceptions import ContractViolation, DomainError, LipschitzViolation, SpecError
from .measures import EmpiricalMeasure, GridCdf, wasserstein, _piecewise_linear_quantile

VALIDATION_MESH = 10_000
QUAD_ABS_TOL = 1e-10
_TABLE_NODES = 4097

# name -> (function of (r, **params), default params)
RANK_REGISTRY = {
    "sine": (lambda r, base=1.0, amplitude=0.5: base + amplitude * np.sin(np.pi * r), {"base": 1.0, "amplitude": 0.5}),
    "exp": (lambda r, scale=1.0, rate=1.0: scale * np.exp(rate * r), {"scale": 1.0, "rate": 1.0}),
    "power": (lambda r, base=1.0, coef=1.0, power=2.0: base + coef * r**power, {"base": 1.0, "coef": 1.0, "power": 2.0}),
}


@dataclass(frozen=True)
class RankFunction:
    """A positive function on [0, 1].

    ``kind`` is one of ``constant``, ``affine``, ``table`` (piecewise linear
    through equally spaced nodes) or ``registry`` (named closed form).
    """

    kind: str
    params: tuple = ()
    name: str | None = None
    options: tuple = ()  # registry keyword parameters as sorted (key, value) pairs

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "table", "registry"):
            raise SpecError(f"unknown rank-function kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "constant" and len(self.params) != 1:
            raise SpecError("constant rank function takes one value")
        if self.kind == "affine" and len(self.params) != 2:
            raise SpecError("affine rank function takes (intercept, slope)")
        if self.kind == "table" and len(self.params) < 2:
            raise SpecError("table rank function needs at least two values")
        if self.kind == "registry":
            if self.name not in RANK_REGISTRY:
                raise SpecError(f"unknown registry entry {self.name!r}")
            defaults = RANK_REGISTRY[self.name][1]
            unknown = set(dict(self.options)) - set(defaults)
            if unknown:
                raise SpecError(f"unknown parameter(s) {sorted(unknown)} for {self.name!r}")
            merged = {**defaults, **{k: float(v) for k, v in dict(self.options).items()}}
            object.__setattr__(self, "options", tuple(sorted(merged.items())))

    @classmethod
    def constant(cls, value):
        return cls("constant", (value,))

    @classmethod
    def affine(cls, intercept, slope):
        return cls("affine", (intercept, slope))

    @classmethod
    def table(cls, values):
        return cls("table", tuple(values))

    @classmethod
    def registry(cls, name, **params):
        return cls("registry", (), name=name, options=tuple(sorted(params.items())))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full_like(r, self.params[0])
        if self.kind == "affine":
            return self.params[0] + self.params[1] * r
        if self.kind == "table":
            nodes = np.linspace(0.0, 1.0, len(self.params))
            return np.interp(r, nodes, self.params)
        fn = RANK_REGISTRY[self.name][0]
        return fn(r, **dict(self.options)) * np.ones_like(r)

    @property
    def kinks(self):
        if self.kind == "table":
            return np.linspace(0.0, 1.0, len(self.params))
        return np.array([0.0, 1.0])

    def _mesh(self):
        return np.union1d(np.linspace(0.0, 1.0, VALIDATION_MESH), self.kinks)

    def min_on_mesh(self):
        return float(np.min(self(self._mesh())))

    def max_on_mesh(self):
        return float(np.max(self(self._mesh())))

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.params[0]}
        if self.kind == "affine":
            return {"kind": "affine", "intercept": self.params[0], "slope": self.params[1]}
        if self.kind == "table":
            return {"kind": "table", "values": list(self.params)}
        return {"kind": "registry", "name": self.name, "params": dict(self.options)}


def _check_unit(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0) or np.any(np.isnan(r)):
        raise DomainError("rank argument must lie in [0, 1]")
    return r


def _integral(fn, r, kinks=()):
    r = _check_unit(r)
    kinks = np.asarray(kinks, dtype=float)

    def one(ri):
        pts = kinks[(kinks > 0.0) & (kinks < ri)]
        return quad(fn, 0.0, ri, epsabs=QUAD_ABS_TOL, epsrel=0.0, limit=200,
                    points=pts if pts.size else None)[0]

    out = np.array([one(float(ri)) for ri in r.ravel()])
    return out.reshape(r.shape) if r.ndim else float(out[0])


def antiderivative_B(spec, r):
    """``B(r) = int_0^r b``; closed form for constant and affine ``b``."""
    r = _check_unit(r)
    if spec.kind == "constant":
        out = spec.params[0] * r
    elif spec.kind == "affine":
        a0, a1 = spec.params
        out = a0 * r + 0.5 * a1 * r * r
    else:
        return _integral(lambda a: float(spec(a)), r, spec.kinks)
    return float(out) if out.ndim == 0 else out


def antiderivative_Sigma(spec, r):
    """``Sigma(r) = int_0^r sigma^2 / 2``; closed form for constant and affine ``sigma``."""
    r = _check_unit(r)
    if spec.kind == "constant":
        out = 0.5 * spec.params[0] ** 2 * r
    elif spec.kind == "affine":
        a0, a1 = spec.params
        if a1 == 0.0:
            out = 0.5 * a0 * a0 * r
        else:
            out = ((a0 + a1 * r) ** 3 - a0**3) / (6.0 * a1)
    else:
        return _integral(lambda a: 0.5 * float(spec(a)) ** 2, r, spec.kinks)
    return float(out) if out.ndim == 0 else out


def _tabulate(integrand, kinks):
    """Fast vectorized antiderivative: Gauss-Legendre per cell + cubic Hermite."""
    nodes = np.union1d(np.linspace(0.0, 1.0, _TABLE_NODES), kinks)
    gx, gw = leggauss(8)
    a, b = nodes[:-1], nodes[1:]
    half = 0.5 * (b - a)
    pts = (a + b)[:, None] * 0.5 + half[:, None] * gx[None, :]
    cells = half * (integrand(pts) @ gw)
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    return CubicHermiteSpline(nodes, cum, integrand(nodes))


class _Antiderivative:
    # vectorized evaluator used in PDE time stepping
    def __init__(self, spec, which):
        self.spec = spec
        self.which = which
        self._spline = None
        if spec.kind not in ("constant", "affine"):
            if which == "B":
                self._spline = _tabulate(spec, spec.kinks)
            else:
                self._spline = _tabulate(lambda a: 0.5 * spec(a) ** 2, spec.kinks)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self._spline is not None:
            return self._spline(np.clip(r, 0.0, 1.0))
        p = self.spec.params
        if self.which == "B":
            if self.spec.kind == "constant":
                return p[0] * r
            return p[0] * r + 0.5 * p[1] * r * r
        if self.spec.kind == "constant" or p[1] == 0.0:
            return 0.5 * p[0] ** 2 * r
        return ((p[0] + p[1] * r) ** 3 - p[0] ** 3) / (6.0 * p[1])


# -- gamma ----------------------------------------------------------------

MEAN_INTEGRANDS = {
    # name -> (f, f', sup|f'| per unit scale, sup|f| per unit scale)
    "tanh": (np.tanh, lambda x: 1.0 / np.cosh(x) ** 2, 1.0, 1.0),
    "sin": (np.sin, np.cos, 1.0, 1.0),
    "arctan": (np.arctan, lambda x: 1.0 / (1.0 + x * x), 1.0, 0.5 * math.pi),
}

TIME_FUNCTIONS = {
    # name -> (f(t, **params), bound(**params))
    "sin": (
        lambda t, amplitude=1.0, frequency=1.0, offset=0.0: offset + amplitude * np.sin(2 * np.pi * frequency * t),
        lambda amplitude=1.0, frequency=1.0, offset=0.0: abs(offset) + abs(amplitude),
    ),
    "exp": (
        lambda t, scale=1.0, rate=1.0: scale * np.exp(-rate * t),
        # decaying only; the bound is the value at t = 0
        lambda scale=1.0, rate=1.0: abs(scale) if rate >= 0 else math.inf,
    ),
}


@dataclass(frozen=True, eq=False)
class GammaSpec:
    """Common-noise intensity ``gamma(t, nu)``.

    ``kind``: ``zero``, ``constant``, ``time`` (depends on ``t`` only),
    ``mean`` (``nu -> scale * int f dnu + offset`` for a registered ``f``) or
    ``custom`` (arbitrary callable with declared constants).
    """

    kind: str
    value: float = 0.0
    lipschitz: float = 0.0
    bound: float = 0.0
    name: str | None = None
    params: dict = field(default_factory=dict)
    func: object = field(default=None, repr=False)
    derivative: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "time", "mean", "custom"):
            raise SpecError(f"unknown gamma kind {self.kind!r}")
        if self.lipschitz < 0 or self.bound < 0:
            raise SpecError("gamma Lipschitz constant and bound must be nonnegative")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value), bound=abs(float(value)))

    @classmethod
    def time_function(cls, name, bound=None, **params):
        if name not in TIME_FUNCTIONS:
            raise SpecError(f"unknown time function {name!r}")
        f, bnd = TIME_FUNCTIONS[name]
        try:
            default = bnd(**params)
        except TypeError as exc:
            raise SpecError(f"bad parameters for time function {name!r}: {exc}") from None
        return cls("time", name=name, params=dict(params), bound=default if bound is None else float(bound),
                   func=lambda t: f(t, **params))

    @classmethod
    def mean_functional(cls, integrand="tanh", scale=1.0, offset=0.0, lipschitz=None, bound=None):
        """``gamma(nu) = scale * int f dnu + offset``; Lipschitz constant ``|scale| sup|f'|``."""
        if integrand not in MEAN_INTEGRANDS:
            raise SpecError(f"unknown mean-functional integrand {integrand!r}")
        f, df, lip, sup = MEAN_INTEGRANDS[integrand]
        scale, offset = float(scale), float(offset)
        L = abs(scale) * lip if lipschitz is None else float(lipschitz)
        B = abs(scale) * sup + abs(offset) if bound is None else float(bound)
        return cls("mean", value=offset, lipschitz=L, bound=B, name=integrand,
                   params={"scale": scale, "offset": offset},
                   func=lambda x: scale * f(x) + offset, derivative=lambda x: scale * df(x))

    @classmethod
    def custom(cls, func, lipschitz, bound):
        return cls("custom", lipschitz=float(lipschitz), bound=float(bound), func=func)

    @property
    def depends_on_measure(self):
        return self.kind in ("mean", "custom")

    def __call__(self, t, nu):
        return gamma_eval(self, t, nu)

    def _check(self, val):
        if np.any(np.abs(val) > self.bound * (1 + 1e-12) + 1e-300):
            raise ContractViolation(f"gamma value {np.max(np.abs(val)):.6g} exceeds declared bound {self.bound:.6g}")
        return val

    def eval_rows(self, t, values, x_min, x_max):
        """gamma at times ``t[j]`` for grid CDFs stored row-wise in ``values``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "zero":
            return np.zeros(t.shape)
        if self.kind == "constant":
            return np.full(t.shape, self.value)
        if self.kind == "time":
            return self._check(np.asarray(self.func(t), dtype=float) * np.ones(t.shape))
        values = np.asarray(values, dtype=float)
        if self.kind == "mean":
            x = np.linspace(x_min, x_max, values.shape[-1])
            dx = x[1] - x[0]
            out = self.func(x_max) - trapezoid(self.derivative(x) * values, dx=dx, axis=-1)
            return self._check(out)
        return np.array([gamma_eval(self, tj, GridCdf(x_min, x_max, v)) for tj, v in zip(t, values)])

    def to_dict(self):
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "time":
            return {"kind": "time", "name": self.name, "params": dict(self.params), "bound": self.bound}
        if self.kind == "mean":
            return {"kind": "mean", "integrand": self.name, "scale": self.params["scale"],
                    "offset": self.params["offset"], "lipschitz": self.lipschitz, "bound": self.bound}
        raise SpecError("custom gamma cannot be serialized")


def gamma_eval(spec, t, nu):
    """Evaluate ``gamma(t, nu)`` for an empirical or grid measure.

    For the mean functional on a grid CDF the integral is computed as
    ``f(x_max) - int f'(x) F(x) dx`` over the truncated grid.
    """
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "constant":
        return spec.value
    if spec.kind == "time":
        return float(spec._check(spec.func(t)))
    if spec.kind == "custom":
        return float(spec._check(spec.func(t, nu)))
    if isinstance(nu, EmpiricalMeasure):
        val = float(np.mean(spec.func(nu.points)))
    elif isinstance(nu, GridCdf):
        val = float(spec.func(nu.x_max) - trapezoid(spec.derivative(nu.x) * nu.values, dx=nu.dx))
    else:
        raise TypeError(f"cannot evaluate gamma on {type(nu).__name__}")
    return float(spec._check(val))


def lipschitz_probe(spec, trials=1000, seed=0, T=1.0):
    """Largest observed ``|gamma(nu1) - gamma(nu2)| / W1(nu1, nu2)`` over random pairs.

    Pairs are equal-size empirical measures, so ``W1`` is exact.  Half of them
    are small perturbations of each other, which probes the local slope.
    Raises :class:`LipschitzViolation` when the declared constant is exceeded.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if not spec.depends_on_measure:
        return 0.0
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, None
    for k in range(trials):
        n = int(rng.integers(1, 41))
        loc, scale = rng.normal(0.0, 2.0), 10 ** rng.uniform(-1.5, 0.7)
        p1 = rng.normal(loc, scale, n)
        if k % 2:
            p2 = p1 + rng.normal(0.0, 10 ** rng.uniform(-6, -1), n)
        else:
            p2 = rng.normal(loc + rng.normal(0.0, 0.5), scale, n)
        nu1, nu2 = EmpiricalMeasure(p1), EmpiricalMeasure(p2)
        w = wasserstein(nu1, nu2, 1.0)
        if w == 0.0:
            continue
        t = float(rng.uniform(0.0, T))
        ratio = abs(gamma_eval(spec, t, nu1) - gamma_eval(spec, t, nu2)) / w
        if ratio > worst:
            worst, witness = ratio, (nu1, nu2)
    if worst > spec.lipschitz * (1 + 1e-9):
        raise LipschitzViolation(
            f"observed ratio {worst:.6g} exceeds declared Lipschitz constant {spec.lipschitz:.6g}",
            witness=witness, ratio=worst,
        )
    return worst


# -- initial law ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Law of the initial positions: Gaussian or a piecewise-linear CDF table.

    A table with a repeated abscissa encodes an atom, e.g. ``x=[0, 0]``,
    ``F=[0, 1]`` is the Dirac mass at 0.
    """

    kind: str = "gaussian"
    mean: float = 0.0
    sd: float = 1.0
    x: tuple = ()
    F: tuple = ()
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "table"):
            raise SpecError(f"unknown initial-law kind {self.kind!r}")
        if not self.p > 1.0:
            raise SpecError("moment exponent p must exceed 1")
        if self.kind == "gaussian" and not self.sd > 0:
            raise SpecError("gaussian initial law needs sd > 0")
        if self.kind == "table":
            x, F = np.asarray(self.x, float), np.asarray(self.F, float)
            if x.size < 2 or x.size != F.size:
                raise SpecError("table initial law needs matching x and F of length >= 2")
            if np.any(np.diff(x) < 0) or np.any(np.diff(F) < 0):
                raise SpecError("table initial law needs nondecreasing x and F")
            if F[0] != 0.0 or F[-1] != 1.0:
                raise SpecError("table initial law must run from F=0 to F=1")
            object.__setattr__(self, "x", tuple(x))
            object.__setattr__(self, "F", tuple(F))

    @classmethod
    def gaussian(cls, mean=0.0, sd=1.0, p=2.0):
        return cls("gaussian", mean=float(mean), sd=float(sd), p=p)

    @classmethod
    def table(cls, x, F, p=2.0):
        return cls("table", x=tuple(x), F=tuple(F), p=p)

    @classmethod
    def dirac(cls, at=0.0, p=2.0):
        return cls.table([at, at], [0.0, 1.0], p=p)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return ndtr((x - self.mean) / self.sd)
        xs, Fs = np.asarray(self.x), np.asarray(self.F)
        k = np.searchsorted(xs, x, side="right")
        kk = np.clip(k, 1, xs.size - 1)
        x0, x1 = xs[kk - 1], xs[kk]
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(x1 > x0, (x - x0) / (x1 - x0), 1.0)
        val = Fs[kk - 1] + np.clip(w, 0, 1) * (Fs[kk] - Fs[kk - 1])
        return np.where(k == 0, 0.0, np.where(k >= xs.size, 1.0, val))

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(~(u > 0)) or np.any(~(u < 1)):
            raise DomainError("quantile levels must lie in (0, 1)")
        if self.kind == "gaussian":
            return self.mean + self.sd * ndtri(u)
        return _piecewise_linear_quantile(np.asarray(self.x), np.asarray(self.F), u)

    def support(self, eps):
        """Interval outside of which at most ``eps`` mass lies on each side."""
        if self.kind == "gaussian":
            return float(self.quantile(eps)), float(self.quantile(1 - eps))
        return float(self.x[0]), float(self.x[-1])

    def grid_cdf(self, x_min, x_max, m, tol=None):
        kw = {} if tol is None else {"tol": tol}
        return GridCdf.from_function(self.cdf, x_min, x_max, m, **kw)

    def second_difference_ratio(self, x_min, x_max, m=2001):
        """Smoke check for smoothness of the CDF.

        Ratio of the max second-difference estimate of ``F''`` on a grid and
        on the grid refined twice; stays near 1 for a smooth CDF and grows for
        kinks (about 2) and jumps (about 4).
        """
        def est(mm):
            x = np.linspace(x_min, x_max, mm)
            h = x[1] - x[0]
            return np.max(np.abs(np.diff(self.cdf(x), 2))) / h**2

        coarse = est(m)
        return est(2 * m - 1) / coarse if coarse > 0 else 1.0

    def is_smooth(self, x_min, x_max):
        return self.second_difference_ratio(x_min, x_max) < 1.5

    def to_dict(self):
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean, "sd": self.sd, "p": self.p}
        return {"kind": "table", "x": list(self.x), "F": list(self.F), "p": self.p}


# -- bundle ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    """The triple ``(b, sigma, gamma)`` with vectorized ``B`` and ``Sigma``."""

    b: RankFunction
    sigma: RankFunction
    gamma: GammaSpec = field(default_factory=GammaSpec.zero)

    def __post_init__(self):
        object.__setattr__(self, "_B", _Antiderivative(self.b, "B"))
        object.__setattr__(self, "_Sigma", _Antiderivative(self.sigma, "Sigma"))

    def validate(self, allow_degenerate=False):
        """Check ``b >= 0`` and ``min sigma > 0`` on the validation mesh.

        Returns the list of problems found (empty when valid).  Zero drift is
        admitted so that the pure-diffusion case stays expressible; the upwind
        direction of the PDE scheme only needs ``b >= 0``.  ``allow_degenerate``
        also admits ``sigma = 0`` for deterministic test systems.
        """
        errors = []
        lo = self.b.min_on_mesh()
        if not lo >= 0:
            errors.append(f"b violates the drift positivity condition: need b >= 0 on [0, 1], found min b = {lo:.6g}")
        lo = self.sigma.min_on_mesh()
        if not (lo > 0 or (allow_degenerate and lo == 0)):
            errors.append(f"sigma must be bounded away from zero on [0, 1]; found min sigma = {lo:.6g}")
        return errors

    def B(self, r):
        return self._B(r)

    def Sigma(self, r):
        return self._Sigma(r)

    @property
    def max_b(self):
        return max(self.b.max_on_mesh(), 0.0)

    @property
    def max_diffusivity(self):
        # max of sigma^2 / 2
        s = self.sigma(np.linspace(0.0, 1.0, VALIDATION_MESH))
        return 0.5 * float(np.max(s * s))

    def without_gamma(self):
        return CoefficientSpec(self.b, self.sigma, GammaSpec.zero())
