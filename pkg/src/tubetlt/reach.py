"""Maximal and minimal reachable tubes by backward dynamic programming on a grid.

Both recursions run over integer steps ``k = b, b-1, ..., 0``::

    max:  T_b = Tgt,  T_k = (Tgt if k >= a) | (Con & robust_pre(T_{k+1}))
    min:  T_b = Tgt,  T_k = (Tgt if k >= a) | adversarial_pre(T_{k+1})

Inside each of the stretches ``k >= a`` and ``k < a`` the map is time
invariant, so once two consecutive slices agree the remaining ones of that
stretch are copies; slices are shared rather than recomputed.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import GridMismatchError, IntervalError, MemoryBudgetError
from .gridset import Grid, GridSet
from .system import SystemModel

DEFAULT_TUBE_BUDGET = 8 * 1024**3  # bytes of distinct slice masks


@dataclass(frozen=True, eq=False)
class Tube:
    """Step-indexed sequence of cell sets.  A ``constant`` tube has a single
    slice returned for every step."""

    grid: Grid
    slices: tuple  # of read-only bool masks, possibly shared
    constant: bool = False

    @classmethod
    def from_set(cls, s: GridSet) -> "Tube":
        return cls(s.grid, (s.mask,), constant=True)

    @property
    def K(self) -> int:
        """Final step index (0 for constant tubes)."""
        return len(self.slices) - 1

    def __len__(self):
        return len(self.slices)

    def at(self, k: int) -> GridSet:
        if self.constant:
            return GridSet(self.grid, self.slices[0])
        if k < 0 or k > self.K:
            raise IndexError(f"tube slice {k} outside 0..{self.K}")
        return GridSet(self.grid, self.slices[k])

    def __eq__(self, other):
        if not isinstance(other, Tube) or other.grid != self.grid:
            return False
        if self.constant and other.constant:
            return np.array_equal(self.slices[0], other.slices[0])
        n = max(len(self), len(other))
        return all(np.array_equal(self.at(k).mask, other.at(k).mask) for k in range(n))

    def distinct_slices(self) -> int:
        return len({id(s) for s in self.slices})

    def manifest(self) -> dict:
        return {
            "grid": {"lower": self.grid.lower, "upper": self.grid.upper, "counts": self.grid.counts},
            "horizon": self.K,
            "constant": self.constant,
            "counts": [int(s.sum()) for s in self.slices],
        }

    def export(self, directory: str, stem: str = "slice") -> list[str]:
        """One CSV of member cell centres per slice plus ``manifest.json``."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        for k in range(len(self.slices)):
            path = os.path.join(directory, f"{stem}_{k:04d}.csv")
            with open(path, "w") as fh:
                fh.write(self.at(k).to_csv())
            paths.append(path)
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(self.manifest(), fh, indent=2)
        return paths


TargetSpec = Union[GridSet, Tube]


def _slice(spec: TargetSpec, k: int) -> np.ndarray:
    if isinstance(spec, GridSet):
        return spec.mask
    return spec.at(min(k, spec.K)).mask


def _grid_of(spec: TargetSpec) -> Grid:
    return spec.grid


def _padded(mask: np.ndarray) -> np.ndarray:
    # index -1 (left the grid) reads the trailing False
    return np.append(mask, False)


def _summed_area(grid: Grid, mask: np.ndarray) -> np.ndarray:
    sat = mask.reshape(grid.counts).astype(np.int32)
    for ax in range(grid.ndim):
        np.cumsum(sat, axis=ax, out=sat)
    return np.pad(sat, [(1, 0)] * grid.ndim).ravel()


def _box_counts(sat: np.ndarray, tab, i: int) -> np.ndarray:
    """Number of marked cells inside the clipped image box of every cell
    under control ``i``, by inclusion-exclusion on a summed-area table."""
    total = np.zeros(tab.corners.shape[2], dtype=np.int32)
    for sign, idx in zip(tab.signs, tab.corners[i]):
        if sign > 0:
            total += sat[idx]
        else:
            total -= sat[idx]
    total[tab.empty[i]] = 0
    return total


_SUB: dict = {}


def _subset(tab, where, grid):
    """Cell indices of ``where`` with the cover table restricted to them, or
    None when restricting does not pay.  The last restriction is memoized
    since the constraint rarely changes between steps."""
    if where is None or where.sum() * 2 > grid.size:
        return None
    key = (id(tab), hashlib.sha1(where.tobytes()).digest())
    hit = _SUB.get(key)
    if hit is None:
        idx = np.flatnonzero(where)
        hit = (idx, np.ascontiguousarray(tab.corners[:, :, idx]), tab.inside[:, idx], tab.empty[:, idx])
        _SUB.clear()
        _SUB[key] = hit
    return hit


def _robust_pre_cover(m: SystemModel, grid: Grid, mask: np.ndarray, where=None) -> np.ndarray:
    tab = m.cover_table(grid)
    sat = _summed_area(grid, ~mask)
    sub = _subset(tab, where, grid)
    if sub is None:
        out = np.zeros(grid.size, dtype=bool)
        for i in range(m.n_controls):
            out |= tab.inside[i] & (_box_counts(sat, tab, i) == 0)
        return out
    idx, corners, inside, empty = sub
    small = type(tab)(inside, empty, corners, tab.signs)
    hit = np.zeros(idx.size, dtype=bool)
    for i in range(m.n_controls):
        hit |= inside[i] & (_box_counts(sat, small, i) == 0)
    out = np.zeros(grid.size, dtype=bool)
    out[idx] = hit
    return out


def _adversarial_pre_cover(m: SystemModel, grid: Grid, mask: np.ndarray) -> np.ndarray:
    tab = m.cover_table(grid)
    sat = _summed_area(grid, mask)
    out = np.ones(grid.size, dtype=bool)
    # the working space is a hard constraint here: a possible exit counts as a hit
    for i in range(m.n_controls):
        out &= ~tab.inside[i] | (_box_counts(sat, tab, i) > 0)
    return out


def _robust_pre_mask(m: SystemModel, grid: Grid, mask: np.ndarray, where=None) -> np.ndarray:
    """Robust pre of ``mask``; entries outside ``where`` may be left False."""
    if m.abstraction == "cover":
        return _robust_pre_cover(m, grid, mask, where)
    tab = m.successor_table(grid)
    ext = _padded(mask)
    out = np.zeros(grid.size, dtype=bool)
    for i in range(tab.shape[0]):
        out |= ext[tab[i]].all(axis=0)
    return out


def _adversarial_pre_mask(m: SystemModel, grid: Grid, mask: np.ndarray) -> np.ndarray:
    if m.abstraction == "cover":
        return _adversarial_pre_cover(m, grid, mask)
    tab = m.successor_table(grid)
    ext = _padded(mask)
    out = np.ones(grid.size, dtype=bool)
    for i in range(tab.shape[0]):
        out &= ext[tab[i]].any(axis=0)
    return out


def robust_pre(m: SystemModel, s: GridSet) -> GridSet:
    """Cells from which some sampled control keeps every sampled successor in ``s``."""
    return GridSet(s.grid, _robust_pre_mask(m, s.grid, s.mask))


def adversarial_pre(m: SystemModel, s: GridSet) -> GridSet:
    """Cells from which every sampled control admits a sampled disturbance into ``s``."""
    return GridSet(s.grid, _adversarial_pre_mask(m, s.grid, s.mask))


def _check_interval(a: int, b: int):
    if a < 0 or b < a:
        raise IntervalError(f"empty step interval [{a}, {b}]")


def _check_budget(grid: Grid, length: int, budget: int):
    # worst case when no fixed point is found
    if grid.size * length > budget:
        raise MemoryBudgetError(
            f"tube of {length} slices over {grid.size} cells exceeds budget of {budget} bytes"
        )


def _backward(grid, a, b, tgt, con, pre, budget):
    _check_interval(a, b)
    _check_budget(grid, b + 1, budget)
    slices: list = [None] * (b + 1)
    cur = tgt(b).copy()
    cur.setflags(write=False)
    slices[b] = cur
    stable = False
    for k in range(b - 1, -1, -1):
        # leaving the k >= a stretch resets the fixed-point shortcut
        if k == a - 1:
            stable = False
        if stable and tgt.constant and con.constant:
            slices[k] = cur
            continue
        c = con(k)
        # only constraint cells not already in the target need the pre
        where = c if (c is None or k < a) else c & ~tgt(k)
        nxt = pre(cur, where)
        if c is not None:
            nxt &= c
        if k >= a:
            nxt |= tgt(k)
        if np.array_equal(nxt, cur):
            stable = True
            slices[k] = cur
            continue
        nxt.setflags(write=False)
        cur = nxt
        slices[k] = cur
    return Tube(grid, tuple(slices))


class _Sel:
    def __init__(self, spec):
        self.spec = spec
        self.constant = spec is None or isinstance(spec, GridSet) or spec.constant

    def __call__(self, k):
        if self.spec is None:
            return None
        return _slice(self.spec, k)


def max_reach_tube(
    m: SystemModel,
    target: TargetSpec,
    constraint: TargetSpec | None,
    interval: tuple[int, int],
    budget: int = DEFAULT_TUBE_BUDGET,
) -> Tube:
    """Maximal reachable tube: exists a control, for all disturbances, the
    target is reached within the window while the constraint holds before."""
    grid = _grid_of(target)
    if constraint is not None and _grid_of(constraint) != grid:
        raise GridMismatchError("target and constraint on different grids")
    a, b = interval
    return _backward(
        grid, a, b, _Sel(target), _Sel(constraint), lambda s, where: _robust_pre_mask(m, grid, s, where), budget
    )


def min_reach_tube(
    m: SystemModel,
    target: TargetSpec,
    interval: tuple[int, int],
    budget: int = DEFAULT_TUBE_BUDGET,
) -> Tube:
    """Minimal reachable tube: for all controls, some disturbance drives the
    state into the target within the window."""
    grid = _grid_of(target)
    a, b = interval
    return _backward(grid, a, b, _Sel(target), _Sel(None), lambda s, where: _adversarial_pre_mask(m, grid, s), budget)


class TubeCache:
    """Content-addressed memo of tube computations, optionally mirrored to disk."""

    def __init__(self, directory: str | None = None):
        self.directory = directory
        self.memory: dict[str, Tube] = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(kind: str, m: SystemModel, target: GridSet, constraint: GridSet | None, interval) -> str:
        h = hashlib.sha1()
        h.update(kind.encode())
        h.update(m.digest().encode())
        g = target.grid
        h.update(repr((g.lower, g.upper, g.counts)).encode())
        h.update(target.digest().encode())
        h.update(b"-" if constraint is None else constraint.digest().encode())
        h.update(repr(tuple(interval)).encode())
        return h.hexdigest()

    def _path(self, key):
        return os.path.join(self.directory, f"{key}.npz")

    def get(self, key: str, grid: Grid) -> Tube | None:
        tube = self.memory.get(key)
        if tube is None and self.directory and os.path.exists(self._path(key)):
            data = np.load(self._path(key))
            uniq = np.unpackbits(data["uniq"], axis=1, count=grid.size).astype(bool)
            for row in uniq:
                row.setflags(write=False)
            tube = Tube(grid, tuple(uniq[i] for i in data["ref"]))
            self.memory[key] = tube
        if tube is None:
            self.misses += 1
        else:
            self.hits += 1
        return tube

    def put(self, key: str, tube: Tube):
        self.memory[key] = tube
        if self.directory:
            os.makedirs(self.directory, exist_ok=True)
            order: dict[int, int] = {}
            uniq = []
            ref = []
            for s in tube.slices:
                if id(s) not in order:
                    order[id(s)] = len(uniq)
                    uniq.append(s)
                ref.append(order[id(s)])
            np.savez_compressed(self._path(key), uniq=np.packbits(np.array(uniq), axis=1), ref=np.array(ref))

    def max_reach(self, m, target: GridSet, constraint: GridSet | None, interval, **kw) -> Tube:
        k = self.key("max", m, target, constraint, interval)
        tube = self.get(k, target.grid)
        if tube is None:
            tube = max_reach_tube(m, target, constraint, interval, **kw)
            self.put(k, tube)
        return tube

    def min_reach(self, m, target: GridSet, interval, **kw) -> Tube:
        k = self.key("min", m, target, None, interval)
        tube = self.get(k, target.grid)
        if tube is None:
            tube = min_reach_tube(m, target, interval, **kw)
            self.put(k, tube)
        return tube
