"""Smooth compactly supported test functions for weak-form residuals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True)
class Bump:
    """``phi(x) = exp(-1 / (1 - z^2))`` for ``|z| < 1``, ``z = (x - center) / radius``."""

    center: float
    radius: float

    def _z(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.radius
        inside = np.abs(z) < 1.0
        zi = np.where(inside, z, 0.0)
        return zi, inside

    def __call__(self, x):
        z, inside = self._z(x)
        return np.where(inside, np.exp(-1.0 / (1.0 - z * z)), 0.0)

    def d1(self, x):
        z, inside = self._z(x)
        q = 1.0 - z * z
        g1 = -2.0 * z / q**2
        return np.where(inside, np.exp(-1.0 / q) * g1 / self.radius, 0.0)

    def d2(self, x):
        z, inside = self._z(x)
        q = 1.0 - z * z
        g1 = -2.0 * z / q**2
        g2 = -2.0 / q**2 - 8.0 * z * z / q**3
        return np.where(inside, np.exp(-1.0 / q) * (g1 * g1 + g2) / self.radius**2, 0.0)

    def check_inside(self, x_min, x_max):
        if self.center - self.radius <= x_min or self.center + self.radius >= x_max:
            raise DomainError(
                f"test function support [{self.center - self.radius:.6g}, {self.center + self.radius:.6g}] "
                f"touches the domain boundary [{x_min:.6g}, {x_max:.6g}]"
            )


def bump_family(k, lo, hi, overlap=1.5):
    """``k`` bumps with centres evenly spread over ``(lo, hi)``."""
    if k < 1 or not hi > lo:
        raise DomainError("need k >= 1 and hi > lo")
    centers = np.linspace(lo, hi, k + 2)[1:-1]
    spacing = (hi - lo) / (k + 1)
    radius = min(overlap * spacing, centers[0] - lo, hi - centers[-1]) * 0.999
    return [Bump(float(c), float(radius)) for c in centers]
