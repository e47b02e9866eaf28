"""Run configuration: YAML schema, defaults and validation.

A config is a YAML mapping.  Every key is optional; missing keys take the
values in ``DEFAULTS``.  ``parse_config`` collects every problem it finds and
raises a single :class:`ConfigError` listing them all.  ``canonical_yaml``
prints the fully resolved config with sorted keys; parsing that text again
gives the same text back.

Schema (defaults in brackets)::

    experiment: solve-pme | simulate | fixed-point | converge | spde-residual
    seed: int [42]
    T: float [1.0]
    dt: float [0.001]
    coefficients:
      b, sigma:                          rank functions [constant 1.0]
        {kind: constant, value}
        {kind: affine, intercept, slope}
        {kind: table, values: [v0, ..., vk]}      piecewise linear on [0, 1]
        {kind: registry, name: sine|exp|power, params: {...}}
      gamma:                             [zero]
        {kind: zero}
        {kind: constant, value}
        {kind: time, name: sin|exp, params: {...}, bound}
        {kind: mean, integrand: tanh|sin|arctan, scale, offset, lipschitz, bound}
    initial_law:                         [gaussian 0, 1]
      {kind: gaussian, mean, sd, p}
      {kind: table, x: [...], F: [...], p}
    grid: {x_min, x_max, m [spacing 0.005], cfl_safety [0.9], boundary_mass_tol [1e-6], snapshot_dt}
    simulate: {n [1000], dump_positions [false]}
    fixed_point: {tol [1e-8], max_iter [30], initial_shift: zero|brownian [zero]}
    converge: {T [0.5], n_values [100, 400, 1600, 6400], replicas [20]}
    residual: {source: closed-form|numeric, levels [3], n_test [5], base_dt [0.004],
               base_m [901], scheme: milstein|ito, x_min [-8], x_max [10]}
    export: {slice_times}
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass

import yaml

from .coefficients import (CoefficientSpec, GammaSpec, InitialLaw, RankFunction,
                           lipschitz_probe)
from .exceptions import CommonNoiseError, ConfigError

EXPERIMENTS = ("solve-pme", "simulate", "fixed-point", "converge", "spde-residual")

DEFAULTS = {
    "experiment": None,
    "seed": 42,
    "T": 1.0,
    "dt": 1e-3,
    "coefficients": {
        "b": {"kind": "constant", "value": 1.0},
        "sigma": {"kind": "constant", "value": 1.0},
        "gamma": {"kind": "zero"},
    },
    "initial_law": {"kind": "gaussian", "mean": 0.0, "sd": 1.0, "p": 2.0},
    "grid": {"x_min": None, "x_max": None, "m": None, "cfl_safety": 0.9,
             "boundary_mass_tol": 1e-6, "snapshot_dt": None},
    "simulate": {"n": 1000, "dump_positions": False},
    "fixed_point": {"tol": 1e-8, "max_iter": 30, "initial_shift": "zero"},
    "converge": {"T": 0.5, "n_values": [100, 400, 1600, 6400], "replicas": 20},
    "residual": {"source": "closed-form", "levels": 3, "n_test": 5, "base_dt": 0.004,
                 "base_m": 901, "scheme": "milstein", "x_min": -8.0, "x_max": 10.0},
    "export": {"slice_times": None},
}

# keys whose values are free-form mappings checked by their own parser
_OPAQUE = {"coefficients.b", "coefficients.sigma", "coefficients.gamma", "initial_law"}

_RANK_KEYS = {
    "constant": {"value"},
    "affine": {"intercept", "slope"},
    "table": {"values"},
    "registry": {"name", "params"},
}
_GAMMA_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "time": {"name", "params", "bound"},
    "mean": {"integrand", "scale", "offset", "lipschitz", "bound"},
}
_LAW_KEYS = {"gaussian": {"mean", "sd", "p"}, "table": {"x", "F", "p"}}


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration.  ``data`` is the resolved mapping."""

    data: dict
    coefficients: CoefficientSpec
    initial_law: InitialLaw

    @property
    def experiment(self):
        return self.data["experiment"]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def T(self):
        return self.data["T"]

    @property
    def dt(self):
        return self.data["dt"]

    def section(self, name):
        return self.data[name]

    def with_overrides(self, **kw):
        data = copy.deepcopy(self.data)
        data.update({k: v for k, v in kw.items() if v is not None})
        return build(data)

    def canonical(self):
        return canonical_yaml(self.data)

    def sha256(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.canonical() == other.canonical()


def canonical_yaml(data):
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False, allow_unicode=False)


def _merge(defaults, given, path, errors):
    if not isinstance(given, dict):
        errors.append(f"{path or 'config'}: expected a mapping, got {type(given).__name__}")
        return copy.deepcopy(defaults)
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        name = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            errors.append(f"unknown key {name!r}")
        elif name in _OPAQUE:
            out[key] = val
        elif isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val if val is not None else {}, name, errors)
        else:
            out[key] = val
    return out


def _number(errors, name, v, positive=False, integer=False, allow_none=False):
    if v is None and allow_none:
        return True
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if ok and integer:
        ok = float(v) == int(v)
    if ok and positive:
        ok = v > 0
    if not ok:
        what = "positive " if positive else ""
        errors.append(f"{name}: expected a {what}{'integer' if integer else 'number'}, got {v!r}")
    return ok


def _check_keys(errors, name, d, kinds):
    if not isinstance(d, dict):
        errors.append(f"{name}: expected a mapping")
        return None
    kind = d.get("kind")
    if kind not in kinds:
        errors.append(f"{name}.kind: expected one of {sorted(kinds)}, got {kind!r}")
        return None
    for k in d:
        if k != "kind" and k not in kinds[kind]:
            errors.append(f"unknown key '{name}.{k}'")
    return kind


def _rank_function(errors, name, d):
    kind = _check_keys(errors, name, d, _RANK_KEYS)
    try:
        if kind == "constant":
            return RankFunction.constant(d["value"])
        if kind == "affine":
            return RankFunction.affine(d["intercept"], d["slope"])
        if kind == "table":
            return RankFunction.table(d["values"])
        if kind == "registry":
            return RankFunction.registry(d["name"], **(d.get("params") or {}))
    except KeyError as exc:
        errors.append(f"missing key '{name}.{exc.args[0]}'")
    except (CommonNoiseError, TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
    return None


def _gamma(errors, d):
    name = "coefficients.gamma"
    kind = _check_keys(errors, name, d, _GAMMA_KEYS)
    try:
        if kind == "zero":
            return GammaSpec.zero()
        if kind == "constant":
            return GammaSpec.constant(d["value"])
        if kind == "time":
            return GammaSpec.time_function(d["name"], d.get("bound"), **(d.get("params") or {}))
        if kind == "mean":
            return GammaSpec.mean_functional(d.get("integrand", "tanh"), d.get("scale", 1.0), d.get("offset", 0.0),
                                             d.get("lipschitz"), d.get("bound"))
    except KeyError as exc:
        errors.append(f"missing key '{name}.{exc.args[0]}'")
    except (CommonNoiseError, TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
    return None


def _law(errors, d):
    kind = _check_keys(errors, "initial_law", d, _LAW_KEYS)
    try:
        if kind == "gaussian":
            return InitialLaw.gaussian(d.get("mean", 0.0), d.get("sd", 1.0), d.get("p", 2.0))
        if kind == "table":
            return InitialLaw.table(d["x"], d["F"], d.get("p", 2.0))
    except KeyError as exc:
        errors.append(f"missing key 'initial_law.{exc.args[0]}'")
    except (CommonNoiseError, TypeError, ValueError) as exc:
        errors.append(f"initial_law: {exc}")
    return None


def _check_scalars(errors, d):
    if d["experiment"] is not None and d["experiment"] not in EXPERIMENTS:
        errors.append(f"experiment: expected one of {list(EXPERIMENTS)}, got {d['experiment']!r}")
    _number(errors, "seed", d["seed"], integer=True)
    if isinstance(d["seed"], int) and not 0 <= d["seed"] < 2**64:
        errors.append("seed: must be an unsigned 64-bit integer")
    _number(errors, "T", d["T"], positive=True)
    _number(errors, "dt", d["dt"], positive=True)
    g = d["grid"]
    lo_ok = _number(errors, "grid.x_min", g["x_min"], allow_none=True)
    hi_ok = _number(errors, "grid.x_max", g["x_max"], allow_none=True)
    if (g["x_min"] is None) != (g["x_max"] is None):
        errors.append("grid: give both x_min and x_max or neither")
    elif lo_ok and hi_ok and g["x_min"] is not None and not g["x_min"] < g["x_max"]:
        errors.append("grid: x_min must be below x_max")
    if _number(errors, "grid.m", g["m"], positive=True, integer=True, allow_none=True) and g["m"] is not None and g["m"] < 3:
        errors.append("grid.m: need at least 3 nodes")
    if _number(errors, "grid.cfl_safety", g["cfl_safety"], positive=True) and g["cfl_safety"] > 1:
        errors.append("grid.cfl_safety: must not exceed 1")
    _number(errors, "grid.boundary_mass_tol", g["boundary_mass_tol"], positive=True)
    _number(errors, "grid.snapshot_dt", g["snapshot_dt"], positive=True, allow_none=True)
    _number(errors, "simulate.n", d["simulate"]["n"], positive=True, integer=True)
    if not isinstance(d["simulate"]["dump_positions"], bool):
        errors.append("simulate.dump_positions: expected true or false")
    fp = d["fixed_point"]
    _number(errors, "fixed_point.tol", fp["tol"], positive=True)
    _number(errors, "fixed_point.max_iter", fp["max_iter"], positive=True, integer=True)
    if fp["initial_shift"] not in ("zero", "brownian"):
        errors.append(f"fixed_point.initial_shift: expected 'zero' or 'brownian', got {fp['initial_shift']!r}")
    cv = d["converge"]
    _number(errors, "converge.T", cv["T"], positive=True)
    _number(errors, "converge.replicas", cv["replicas"], positive=True, integer=True)
    ns = cv["n_values"]
    if not isinstance(ns, list) or not ns or not all(
            isinstance(n, int) and not isinstance(n, bool) and n > 0 for n in ns):
        errors.append("converge.n_values: expected a list of positive integers")
    elif any(b <= a for a, b in zip(ns, ns[1:])):
        errors.append("converge.n_values: must be strictly increasing")
    rs = d["residual"]
    if rs["source"] not in ("closed-form", "numeric"):
        errors.append(f"residual.source: expected 'closed-form' or 'numeric', got {rs['source']!r}")
    if rs["scheme"] not in ("milstein", "ito"):
        errors.append(f"residual.scheme: expected 'milstein' or 'ito', got {rs['scheme']!r}")
    _number(errors, "residual.levels", rs["levels"], positive=True, integer=True)
    _number(errors, "residual.n_test", rs["n_test"], positive=True, integer=True)
    _number(errors, "residual.base_dt", rs["base_dt"], positive=True)
    if _number(errors, "residual.base_m", rs["base_m"], positive=True, integer=True) and rs["base_m"] < 3:
        errors.append("residual.base_m: need at least 3 nodes")
    if (_number(errors, "residual.x_min", rs["x_min"]) and _number(errors, "residual.x_max", rs["x_max"])
            and not rs["x_min"] < rs["x_max"]):
        errors.append("residual: x_min must be below x_max")
    st = d["export"]["slice_times"]
    if st is not None and not (isinstance(st, list) and all(
            isinstance(t, (int, float)) and not isinstance(t, bool) and t >= 0 for t in st)):
        errors.append("export.slice_times: expected a list of nonnegative times")


def _normalize(d):
    # ints given where floats are meant would otherwise change the canonical text
    for key in ("T", "dt"):
        if isinstance(d[key], int) and not isinstance(d[key], bool):
            d[key] = float(d[key])
    for sec, keys in (("grid", ("x_min", "x_max", "cfl_safety", "boundary_mass_tol", "snapshot_dt")),
                      ("fixed_point", ("tol",)), ("converge", ("T",)),
                      ("residual", ("base_dt", "x_min", "x_max"))):
        for k in keys:
            v = d[sec][k]
            if isinstance(v, int) and not isinstance(v, bool):
                d[sec][k] = float(v)
    st = d["export"]["slice_times"]
    if st is not None:
        d["export"]["slice_times"] = [float(t) for t in st]


def build(data, probe=True):
    """Validate a resolved mapping and build the :class:`RunConfig`."""
    errors = []
    d = _merge(DEFAULTS, data, "", errors)
    _check_scalars(errors, d)
    c = d["coefficients"]
    b = _rank_function(errors, "coefficients.b", c["b"])
    sigma = _rank_function(errors, "coefficients.sigma", c["sigma"])
    gamma = _gamma(errors, c["gamma"])
    law = _law(errors, d["initial_law"])
    coef = None
    if b is not None and sigma is not None and gamma is not None:
        coef = CoefficientSpec(b, sigma, gamma)
        errors.extend(f"coefficients: {e}" for e in coef.validate())
    if probe and gamma is not None and gamma.depends_on_measure:
        try:
            lipschitz_probe(gamma)
        except CommonNoiseError as exc:
            errors.append(f"coefficients.gamma: {exc}")
    if errors:
        raise ConfigError(errors)
    _normalize(d)
    c["b"], c["sigma"], c["gamma"] = b.to_dict(), sigma.to_dict(), gamma.to_dict()
    d["initial_law"] = law.to_dict()
    return RunConfig(d, coef, law)


def parse_config(text, experiment=None):
    """Parse YAML text (str or bytes) into a validated :class:`RunConfig`.

    ``experiment`` fills in the experiment kind when the file leaves it out;
    a file naming a different kind is an error.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from None
    if data is None:
        data = {}
    if isinstance(data, dict) and experiment is not None:
        given = data.get("experiment")
        if given is not None and given != experiment:
            raise ConfigError([f"experiment: config says {given!r} but {experiment!r} was requested"])
        data = {**data, "experiment": experiment}
    return build(data)


def load_config(path, experiment=None):
    with open(path, "rb") as fh:
        return parse_config(fh.read(), experiment)
