"""Predicate functions g_mu over the state space.

A predicate holds at ``x`` when ``g(x) >= 0``.  Three shapes are supported,
all of which rasterize exactly onto axis-aligned grids when their
boundaries sit on cell edges.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PredicateDef:
    name: str
    shape: str  # "halfspace" | "ball" | "box"
    params: tuple

    def g(self, x):
        """Evaluate the predicate function on one point or a batch (..., n)."""
        x = np.asarray(x, dtype=float)
        if self.shape == "halfspace":
            normal, offset = self.params
            return x @ np.asarray(normal, dtype=float) + offset
        if self.shape == "ball":
            center, radius = self.params
            return radius - np.linalg.norm(x - np.asarray(center, dtype=float), axis=-1)
        if self.shape == "box":
            lo, hi = (np.asarray(p, dtype=float) for p in self.params)
            with np.errstate(invalid="ignore"):
                margins = np.minimum(x - lo, hi - x)
            margins = np.where(np.isnan(margins), np.inf, margins)
            return margins.min(axis=-1)
        raise ValueError(f"unknown predicate shape {self.shape!r}")

    def holds(self, x) -> bool:
        return bool(self.g(x) >= 0)

    def covers(self, lo, hi, tol: float = 1e-9) -> np.ndarray:
        """Rows where the box ``[lo, hi]`` lies inside the set.  All shapes
        are convex, so checking the corners is enough."""
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        ok = np.ones(lo.shape[0], dtype=bool)
        for pick in itertools.product((False, True), repeat=lo.shape[1]):
            ok &= self.g(np.where(pick, hi, lo)) >= -tol
        return ok

    def meets(self, lo, hi, tol: float = 1e-9) -> np.ndarray:
        """Rows where the half-open box ``[lo, hi)`` intersects the set."""
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        if self.shape == "halfspace":
            normal, offset = self.params
            n = np.asarray(normal, dtype=float)
            best = np.where(n > 0, hi, lo)  # corner maximizing the affine g
            return best @ n + offset >= -tol
        if self.shape == "ball":
            center, radius = self.params
            c = np.asarray(center, dtype=float)
            near = np.clip(c, lo, hi)
            return np.linalg.norm(near - c, axis=-1) <= radius + tol
        if self.shape == "box":
            a, b = (np.asarray(p, dtype=float) for p in self.params)
            return np.all((lo <= b + tol) & (a < hi - tol), axis=-1)
        raise ValueError(f"unknown predicate shape {self.shape!r}")


def halfspace(name, normal, offset) -> PredicateDef:
    """``normal . x + offset >= 0``."""
    return PredicateDef(name, "halfspace", (tuple(float(v) for v in normal), float(offset)))


def ball(name, center, radius) -> PredicateDef:
    """``radius - ||x - center|| >= 0``."""
    return PredicateDef(name, "ball", (tuple(float(v) for v in center), float(radius)))


def box(name, lower, upper) -> PredicateDef:
    """``lower <= x <= upper`` componentwise; bounds may be infinite."""
    lo = tuple(float(v) for v in lower)
    hi = tuple(float(v) for v in upper)
    if len(lo) != len(hi):
        raise ValueError("box bounds differ in dimension")
    if any(a > b for a, b in zip(lo, hi)):
        raise ValueError(f"empty box for predicate {name!r}")
    return PredicateDef(name, "box", (lo, hi))
