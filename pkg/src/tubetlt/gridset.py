"""Uniform rectangular grids over the working space and cell-set algebra.

A state belongs to the cell whose half-open box ``[lo + i*h, lo + (i+1)*h)``
contains it (the last cell is closed on the right).  Predicates are
rasterized by their value at the cell centre by default; the ``inner`` and
``outer`` modes under- and over-approximate the set cell-wise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridMismatchError, MemoryBudgetError
from .predicates import PredicateDef

DEFAULT_CELL_BUDGET = 20_000_000


@dataclass(frozen=True)
class Grid:
    lower: tuple
    upper: tuple
    counts: tuple
    cell_budget: int = field(default=DEFAULT_CELL_BUDGET, compare=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        n = tuple(int(c) for c in self.counts)
        if not (len(lo) == len(hi) == len(n)):
            raise ValueError("grid bounds and counts differ in dimension")
        if any(c < 1 for c in n):
            raise ValueError("every dimension needs at least one cell")
        if not all(np.isfinite(lo + hi)) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("grid bounds must be finite with lower < upper")
        total = int(np.prod(n))
        if total > self.cell_budget:
            raise MemoryBudgetError(f"grid of {total} cells exceeds budget {self.cell_budget}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "counts", n)

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def widths(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.counts)

    @cached_property
    def centers(self) -> np.ndarray:
        """(size, ndim) array of cell centres in flat (C-order) index order."""
        axes = [
            lo + (np.arange(n) + 0.5) * h
            for lo, n, h in zip(self.lower, self.counts, self.widths)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_index(self, x) -> np.ndarray | int:
        """Flat index of the cell containing each point, -1 outside the grid."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        n = np.array(self.counts)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        idx = np.floor((pts - lo) / self.widths).astype(np.int64)
        idx = np.clip(idx, 0, n - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.counts)
        flat = np.where(inside, flat, -1)
        return int(flat[0]) if single else flat

    def multi_index(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.counts), axis=-1)


class GridSet:
    """Immutable set of cells of a grid, stored as a boolean mask."""

    __slots__ = ("grid", "mask")

    def __init__(self, grid: Grid, mask):
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.size != grid.size:
            raise ValueError(f"mask of {mask.size} cells for grid of {grid.size}")
        mask.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mask", mask)

    def __setattr__(self, name, value):
        raise AttributeError("GridSet is immutable")

    @classmethod
    def empty(cls, grid: Grid) -> "GridSet":
        return cls(grid, np.zeros(grid.size, dtype=bool))

    @classmethod
    def full(cls, grid: Grid) -> "GridSet":
        return cls(grid, np.ones(grid.size, dtype=bool))

    @classmethod
    def from_predicate(cls, pred: PredicateDef, grid: Grid, tol: float = 1e-9, mode: str = "center") -> "GridSet":
        """Cells of ``pred``: by centre (``center``), cells lying wholly
        inside the set (``inner``) or cells meeting it (``outer``)."""
        c = grid.centers
        if mode == "center":
            # small tolerance so boundaries lying exactly on centres rasterize stably
            return cls(grid, pred.g(c) >= -tol)
        half = np.asarray(grid.widths) / 2
        if mode == "inner":
            return cls(grid, pred.covers(c - half, c + half, tol))
        if mode == "outer":
            return cls(grid, pred.meets(c - half, c + half, tol))
        raise ValueError(f"unknown rasterization mode {mode!r}")

    @classmethod
    def from_indices(cls, grid: Grid, indices) -> "GridSet":
        mask = np.zeros(grid.size, dtype=bool)
        mask[np.asarray(list(indices), dtype=np.int64)] = True
        return cls(grid, mask)

    def _check(self, other: "GridSet"):
        if self.grid != other.grid:
            raise GridMismatchError("set operation across different grids")

    def union(self, other: "GridSet") -> "GridSet":
        self._check(other)
        return GridSet(self.grid, self.mask | other.mask)

    def intersect(self, other: "GridSet") -> "GridSet":
        self._check(other)
        return GridSet(self.grid, self.mask & other.mask)

    def difference(self, other: "GridSet") -> "GridSet":
        self._check(other)
        return GridSet(self.grid, self.mask & ~other.mask)

    def complement(self) -> "GridSet":
        return GridSet(self.grid, ~self.mask)

    __or__ = union
    __and__ = intersect
    __sub__ = difference
    __invert__ = complement

    def __eq__(self, other):
        return isinstance(other, GridSet) and self.grid == other.grid and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.grid, self.digest()))

    def __len__(self):
        return self.count()

    def __repr__(self):
        return f"GridSet({self.count()}/{self.grid.size} cells)"

    def count(self) -> int:
        return int(self.mask.sum())

    def is_empty(self) -> bool:
        return not self.mask.any()

    def issubset(self, other: "GridSet") -> bool:
        self._check(other)
        return not np.any(self.mask & ~other.mask)

    def contains(self, x) -> bool:
        i = self.grid.cell_index(x)
        return bool(i >= 0 and self.mask[i])

    def symmetric_difference_count(self, other: "GridSet") -> int:
        self._check(other)
        return int(np.count_nonzero(self.mask ^ other.mask))

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def member_centers(self) -> np.ndarray:
        return self.grid.centers[self.mask]

    def digest(self) -> str:
        return hashlib.sha1(np.packbits(self.mask).tobytes()).hexdigest()

    def to_rle(self) -> str:
        """Run-length text: ``<size>:<first bit>:<run>,<run>,...``."""
        m = self.mask.astype(np.int8)
        change = np.flatnonzero(np.diff(m)) + 1
        bounds = np.concatenate([[0], change, [m.size]])
        runs = np.diff(bounds)
        return f"{m.size}:{int(m[0])}:" + ",".join(str(int(r)) for r in runs)

    @classmethod
    def from_rle(cls, grid: Grid, text: str) -> "GridSet":
        size, first, runs = text.strip().split(":")
        if int(size) != grid.size:
            raise GridMismatchError(f"RLE of {size} cells for grid of {grid.size}")
        bit = bool(int(first))
        parts = []
        for r in runs.split(","):
            parts.append(np.full(int(r), bit))
            bit = not bit
        return cls(grid, np.concatenate(parts))

    def to_csv(self) -> str:
        """Point cloud of member cell centres, one row per cell."""
        header = ",".join(f"x{i + 1}" for i in range(self.grid.ndim))
        rows = [",".join(f"{v:.6g}" for v in c) for c in self.member_centers()]
        return "\n".join([header, *rows]) + "\n"
