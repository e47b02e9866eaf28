"""Euler-Maruyama simulation of rank-based particles with a common noise.

Each particle moves by

    dX_i = b(F(X_i)) dt + sigma(F(X_i)) dB_i + gamma(t, rho) dW,

where ``F`` is the empirical CDF of the current configuration ``rho``.  Since
the common term shifts every particle by the same amount, ranks are those of
``Y_i = X_i - Gamma(t)`` with ``Gamma = int gamma dW``.  The simulator evolves
``Y`` (a plain rank-based system) and ``Gamma`` side by side and reconstructs
``X = Y + Gamma``; in exact arithmetic this is the same Euler-Maruyama scheme.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coefficients import CoefficientSpec, InitialLaw
from .exceptions import DomainError, NumericalBlowupError
from .io import write_csv
from .measures import EmpiricalMeasure
from .noise import NoiseBundle, particle_uniforms

log = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True, eq=False)
class SimConfig:
    n: int
    coefficients: CoefficientSpec
    initial: InitialLaw = field(default_factory=InitialLaw)
    T: float = 1.0
    dt: float = 1e-3
    seed: int = 42
    keep_positions: bool = True
    notes: tuple = ()

    def __post_init__(self):
        if int(self.n) < 1:
            raise DomainError("n must be >= 1")
        if not (self.T > 0 and self.dt > 0):
            raise DomainError("T and dt must be positive")
        steps = max(1, round(self.T / self.dt))
        if abs(steps * self.dt - self.T) > 1e-9 * self.T:
            T_new = steps * self.dt
            msg = f"T={self.T} is not a multiple of dt={self.dt}; using T={T_new}"
            log.warning(msg)
            object.__setattr__(self, "T", T_new)
            object.__setattr__(self, "notes", self.notes + (msg,))
        object.__setattr__(self, "n", int(self.n))

    @property
    def steps(self):
        return round(self.T / self.dt)

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Simulated path.

    ``rank_state[j, i]`` is ``Y_i(t_j)`` in particle-identity order and
    ``gamma_integral[j]`` is ``Gamma(t_j)``; positions are ``Y + Gamma``.
    """

    times: np.ndarray
    gamma_integral: np.ndarray
    gamma_values: np.ndarray
    quantiles: np.ndarray
    rank_state: np.ndarray | None = field(default=None, repr=False)
    lineage: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.lineage.get("n")

    @property
    def has_positions(self):
        return self.rank_state is not None

    def positions(self):
        if self.rank_state is None:
            raise DomainError("trajectory was recorded without raw positions")
        return self.rank_state + self.gamma_integral[:, None]

    def state(self, j):
        if self.rank_state is None:
            raise DomainError("trajectory was recorded without raw positions")
        return EmpiricalMeasure(self.rank_state[j] + self.gamma_integral[j])

    def states(self):
        X = self.positions()
        return [EmpiricalMeasure(row) for row in X]

    def to_csv(self, path):
        cols = [self.times, self.gamma_integral] + [self.quantiles[:, k] for k in range(len(QUANTILE_LEVELS))]
        write_csv(path, ["t", "gamma_integral", "q05", "q25", "q50", "q75", "q95"], cols)

    def dump_positions(self, path):
        """Little-endian float64, row-major (time x particle), plus a JSON sidecar."""
        X = np.ascontiguousarray(self.positions(), dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(X.tobytes(order="C"))
        sidecar = {"shape": list(X.shape), "dtype": "<f8", "order": "row-major (time, particle)",
                   "lineage": self.lineage}
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_positions(path):
    with open(str(path) + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    return np.fromfile(path, dtype="<f8").reshape(meta["shape"])


def _quantile_index(n):
    # 0-based order statistic holding inf{x : F(x) >= u}
    levels = np.asarray(QUANTILE_LEVELS)
    return np.clip(np.ceil(levels * n - 1e-12).astype(int) - 1, 0, n - 1)


def sample_initial(config):
    """``n`` i.i.d. draws from the initial law by inverse-CDF sampling.

    Returned in particle-identity order; draw ``i`` uses stream ``i`` only.
    """
    u = particle_uniforms(config.seed, config.n)
    return config.initial.quantile(u)


def rank_fractions(positions):
    """``#{j : x_j <= x_i} / n`` for every particle (ties share a value)."""
    positions = np.asarray(positions, dtype=float)
    return np.searchsorted(np.sort(positions), positions, side="right") / positions.size


def _rank_step(Y, dB, coefficients, dt, step):
    r = rank_fractions(Y)
    new = Y + coefficients.b(r) * dt + coefficients.sigma(r) * dB
    if not np.all(np.isfinite(new)):
        raise NumericalBlowupError(f"non-finite particle position at step {step}", step=step)
    return new


def em_step(positions, t, dW, dB, coefficients, dt, step=0):
    """One Euler-Maruyama step of the full system, ranks taken before the step.

    ``positions`` and ``dB`` are in particle-identity order; the result keeps
    that order.
    """
    positions = np.asarray(positions, dtype=float)
    dB = np.broadcast_to(np.asarray(dB, dtype=float), positions.shape)
    g = coefficients.gamma(t, EmpiricalMeasure(positions)) if coefficients.gamma.depends_on_measure else coefficients.gamma(t, None)
    new = _rank_step(positions, dB, coefficients, dt, step) + g * dW
    if not np.all(np.isfinite(new)):
        raise NumericalBlowupError(f"non-finite particle position at step {step}", step=step)
    return new


def simulate(config, noise=None):
    """Run ``config.steps`` Euler-Maruyama steps.

    ``Gamma`` is accumulated with the left-point rule,
    ``Gamma[j+1] = Gamma[j] + gamma(t_j, rho(t_j)) * dW[j]``.
    """
    n, steps, dt = config.n, config.steps, config.dt
    if noise is None:
        noise = NoiseBundle.generate(config.seed, n, steps, dt)
    if noise.n != n or noise.steps != steps:
        raise DomainError("noise bundle does not match the configuration")
    coef = config.coefficients
    gamma = coef.gamma
    times = config.times

    Y = sample_initial(config)
    G = 0.0
    gammas = np.zeros(steps)
    Gam = np.zeros(steps + 1)
    qs = np.empty((steps + 1, len(QUANTILE_LEVELS)))
    keep = np.empty((steps + 1, n)) if config.keep_positions else None
    qidx = _quantile_index(n)

    for j in range(steps + 1):
        if keep is not None:
            keep[j] = Y
        srt = np.sort(Y)
        qs[j] = srt[qidx] + G
        if j == steps:
            break
        if gamma.depends_on_measure:
            g = gamma(times[j], EmpiricalMeasure(srt + G))
        else:
            g = gamma(times[j], None)
        gammas[j] = g
        Y = _rank_step(Y, noise.idio[:, j], coef, dt, j)
        G = G + g * noise.common[j]
        Gam[j + 1] = G
        if not math.isfinite(G):
            raise NumericalBlowupError(f"non-finite common-noise integral at step {j}", step=j)

    lineage = {**noise.lineage, "T": config.T, "notes": list(config.notes)}
    return TrajectoryRecord(times, Gam, gammas, qs, keep, lineage)


def decompose_y(traj):
    """The rank-based system ``Y = X - Gamma`` as a trajectory with ``Gamma = 0``."""
    if traj.rank_state is None:
        raise DomainError("decompose_y needs a trajectory recorded with raw positions")
    zero = np.zeros_like(traj.gamma_integral)
    Y = traj.rank_state
    qs = np.sort(Y, axis=1)[:, _quantile_index(Y.shape[1])]
    return replace(traj, gamma_integral=zero, quantiles=qs)


def moment_check(traj, p):
    """``sup_t`` of the empirical ``p``-th absolute moment."""
    if not p > 1:
        raise DomainError("moment exponent must exceed 1")
    X = traj.positions()
    return float(np.max(np.mean(np.abs(X) ** p, axis=1)))
