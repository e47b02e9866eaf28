"""Keyed, counter-based Gaussian streams.

Every stream is a Philox generator whose key is derived from ``(seed, tag)``.
Per-particle streams share the key of their tag and start at counter block
``i``, so particle ``i`` sees the same numbers whatever the system size, and
the common stream depends on the seed alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_TAGS = {"common": 1, "idio": 2, "init": 3, "bridge": 4, "replica": 5}
_MASK64 = (1 << 64) - 1


def stream_key(seed, tag, *extra):
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF, _TAGS[tag], *map(int, extra)]
    return np.random.SeedSequence(words).generate_state(2, np.uint64)


def generator(seed, tag, index=None, *extra):
    key = stream_key(seed, tag, *extra)
    if index is None:
        return np.random.Generator(np.random.Philox(key=key))
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(index) & _MASK64]))


def open_uniform(gen, size=None):
    """Uniforms in the open interval (0, 1) with 53 random bits."""
    k = gen.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (k + 0.5) * 2.0**-53


def replica_seed(seed, replica):
    return int(stream_key(seed, "replica", replica)[0] & 0x7FFFFFFFFFFFFFFF)


def common_increments(seed, steps, dt):
    return math.sqrt(dt) * generator(seed, "common").standard_normal(steps)


def particle_increments(seed, n, steps, dt):
    """``(n, steps)`` array; row ``i`` depends only on ``(seed, i)``."""
    out = np.empty((n, steps))
    sq = math.sqrt(dt)
    for i in range(n):
        out[i] = sq * generator(seed, "idio", i).standard_normal(steps)
    return out


def particle_uniforms(seed, n):
    return np.array([open_uniform(generator(seed, "init", i)) for i in range(n)])


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Common increments ``dW[j]`` and idiosyncratic increments ``dB[i, j]``."""

    seed: int
    n: int
    steps: int
    dt: float
    common: np.ndarray = field(repr=False)
    idio: np.ndarray = field(repr=False)

    @classmethod
    def generate(cls, seed, n, steps, dt):
        return cls(seed, n, steps, dt, common_increments(seed, steps, dt), particle_increments(seed, n, steps, dt))

    @property
    def lineage(self):
        return {
            "seed": int(self.seed),
            "generator": "Philox4x64",
            "common_stream": ["common"],
            "idiosyncratic_stream": ["idio", "counter block = particle index"],
            "initial_stream": ["init", "counter block = particle index"],
            "n": self.n,
            "steps": self.steps,
            "dt": self.dt,
        }


def refine_increments(dW, dt, seed, level):
    """Halve the step of a Brownian path by sampling each midpoint from the bridge.

    Each coarse increment ``d`` splits into ``d/2 + sqrt(dt/4) Z`` and the
    remainder, so the coarse path is recovered by summing pairs.
    """
    dW = np.asarray(dW, dtype=float)
    z = generator(seed, "bridge", None, level).standard_normal(dW.size)
    first = 0.5 * dW + math.sqrt(dt / 4.0) * z
    out = np.empty(2 * dW.size)
    out[0::2] = first
    out[1::2] = dW - first
    return out


def brownian_path(dW):
    return np.concatenate([[0.0], np.cumsum(dW)])
