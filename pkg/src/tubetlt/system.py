"""Discrete-time uncertain dynamics with finitely sampled controls and disturbances."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, MemoryBudgetError
from .gridset import Grid, GridSet

DEFAULT_TABLE_BUDGET = 2 * 1024**3  # bytes
EPS = 1e-9


def box_vertices(lower, upper) -> np.ndarray:
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    corners = itertools.product(*[sorted({a, b}) for a, b in zip(lo, hi)])
    return np.array(list(corners), dtype=float)


def box_samples(lower, upper, per_dim) -> np.ndarray:
    """Regular lattice over a box, ``per_dim`` points per axis including the ends."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if np.isscalar(per_dim):
        per_dim = [int(per_dim)] * lo.size
    axes = [np.linspace(a, b, n) if n > 1 else np.array([(a + b) / 2]) for a, b, n in zip(lo, hi, per_dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def ball_samples(radius, dim, per_dim, boundary: int = 0) -> np.ndarray:
    """Lattice points of the cube ``[-r, r]^dim`` inside the ball, plus
    ``boundary`` equally spaced points on the circle when ``dim == 2``."""
    pts = box_samples([-radius] * dim, [radius] * dim, per_dim)
    pts = pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]
    if boundary and dim == 2:
        ang = 2 * np.pi * np.arange(boundary) / boundary
        ring = radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        pts = np.concatenate([pts, ring])
    return _unique_rows(pts)


def circle_samples(radius, count) -> np.ndarray:
    ang = 2 * np.pi * np.arange(count) / count
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _unique_rows(a: np.ndarray) -> np.ndarray:
    a = np.round(a, 12) + 0.0  # fold -0.0 into 0.0
    _, idx = np.unique(a, axis=0, return_index=True)
    return a[np.sort(idx)]


@dataclass(frozen=True)
class Region:
    """Compact set used for sampling and membership of u or w."""

    shape: str  # "box" | "ball"
    lower: tuple = ()
    upper: tuple = ()
    radius: float = 0.0
    dim: int = 0

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        if self.shape == "box":
            return bool(np.all(v >= np.asarray(self.lower) - tol) and np.all(v <= np.asarray(self.upper) + tol))
        return bool(np.linalg.norm(v) <= self.radius + tol)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.shape == "box":
            return rng.uniform(self.lower, self.upper)
        d = rng.normal(size=self.dim)
        d /= np.linalg.norm(d) or 1.0
        return d * self.radius * rng.uniform() ** (1.0 / self.dim)


def box_region(lower, upper) -> Region:
    lo = tuple(float(v) for v in lower)
    return Region("box", lo, tuple(float(v) for v in upper), dim=len(lo))


def ball_region(radius, dim) -> Region:
    return Region("ball", radius=float(radius), dim=int(dim))


@dataclass(frozen=True, eq=False)
class SystemModel:
    """``x+ = f(x, u, w)`` with sample sets ``controls`` and ``disturbances``.

    ``kind`` is ``"linear"`` (``A x + B u + w``), ``"integrator"``
    (``x + u + w``) or ``"custom"`` (``fn(X, u, w)`` acting on a batch of
    rows).  ``reach_margin`` inflates the disturbance set used by the
    reachability recursion only; simulation always uses the true samples.

    ``abstraction`` selects how a grid cell is propagated: ``"center"`` maps
    the cell centre through every sampled control and disturbance, while
    ``"cover"`` (linear and integrator models with a box ``w_region``) maps the
    whole cell and the whole disturbance box to a bounding box of cells, which
    makes the computed tubes sound for every point of a member cell.
    """

    kind: str
    controls: np.ndarray
    disturbances: np.ndarray
    period: float = 1.0
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    fn: Optional[Callable] = None
    u_region: Optional[Region] = None
    w_region: Optional[Region] = None
    reach_margin: Optional[tuple] = None
    name: str = "model"
    table_budget: int = field(default=DEFAULT_TABLE_BUDGET)
    abstraction: str = "center"

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.controls, dtype=float))
        w = np.atleast_2d(np.asarray(self.disturbances, dtype=float))
        if u.shape[0] == 0 or w.shape[0] == 0:
            raise ConfigError("control and disturbance sample sets must be nonempty")
        object.__setattr__(self, "controls", u)
        object.__setattr__(self, "disturbances", w)
        if self.kind == "linear":
            if self.A is None or self.B is None:
                raise ConfigError("linear model needs A and B")
            object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
            object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        elif self.kind == "custom":
            if self.fn is None:
                raise ConfigError("custom model needs a step function")
        elif self.kind != "integrator":
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.abstraction not in ("center", "cover"):
            raise ConfigError(f"unknown abstraction {self.abstraction!r}")
        if self.abstraction == "cover":
            if self.kind == "custom":
                raise ConfigError("cover abstraction needs a linear or integrator model")
            if self.w_region is None or self.w_region.shape != "box":
                raise ConfigError("cover abstraction needs a box disturbance region")
        object.__setattr__(self, "_tables", {})

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def step(self, x, u, w):
        """Next state for one state (n,) or a batch (N, n)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.kind == "linear":
            return x @ self.A.T + self.B @ u + w
        if self.kind == "integrator":
            return x + u + w
        return np.asarray(self.fn(x, u, w), dtype=float)

    @property
    def reach_disturbances(self) -> np.ndarray:
        m = self.reach_margin
        if m is None or not np.any(np.asarray(m) > 0):
            return self.disturbances
        m = np.asarray(m, dtype=float)
        if self.w_region is not None and self.w_region.shape == "box":
            return box_vertices(np.asarray(self.w_region.lower) - m, np.asarray(self.w_region.upper) + m)
        shifts = box_vertices(-m, m)
        return _unique_rows((self.disturbances[:, None, :] + shifts[None, :, :]).reshape(-1, m.size))

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(self.kind.encode())
        for arr in (self.controls, self.reach_disturbances, self.A, self.B):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        if self.fn is not None:
            h.update(getattr(self.fn, "__qualname__", repr(self.fn)).encode())
            h.update(str(id(self.fn)).encode())
        h.update(repr(self.period).encode())
        h.update(self.abstraction.encode())
        return h.hexdigest()

    def image_box(self, points, half, u):
        """Bounding box ``(lo, hi)`` of ``f(p + e, u, w)`` over ``|e| <= half``
        and ``w`` in the disturbance box, for each row ``p`` of ``points``."""
        lo_w = np.asarray(self.w_region.lower, dtype=float)
        hi_w = np.asarray(self.w_region.upper, dtype=float)
        mid = self.step(points, u, (lo_w + hi_w) / 2)
        half = np.asarray(half, dtype=float)
        gain = np.abs(self.A) @ half if self.kind == "linear" else half
        rad = gain + (hi_w - lo_w) / 2
        return mid - rad, mid + rad

    def successor_table(self, grid: Grid) -> np.ndarray:
        """int32 array (|U|, |W_reach|, cells): cell of ``f(centre, u, w)``,
        ``-1`` when the successor leaves the grid."""
        key = grid
        tab = self._tables.get(key)
        if tab is not None:
            return tab
        wr = self.reach_disturbances
        nbytes = 4 * self.n_controls * wr.shape[0] * grid.size
        if nbytes > self.table_budget:
            raise MemoryBudgetError(
                f"successor table needs {nbytes / 2**20:.0f} MiB, budget {self.table_budget / 2**20:.0f} MiB"
            )
        tab = np.empty((self.n_controls, wr.shape[0], grid.size), dtype=np.int32)
        centers = grid.centers
        for i, u in enumerate(self.controls):
            for j, w in enumerate(wr):
                tab[i, j] = grid.cell_index(self.step(centers, u, w))
        tab.setflags(write=False)
        self._tables[key] = tab
        return tab

    def cover_table(self, grid: Grid) -> "CoverTable":
        """Cell images under the cover abstraction, one entry per control."""
        key = ("cover", grid)
        tab = self._tables.get(key)
        if tab is not None:
            return tab
        d = grid.ndim
        nbytes = self.n_controls * grid.size * (4 * 2**d + 2)
        if nbytes > self.table_budget:
            raise MemoryBudgetError(
                f"cover table needs {nbytes / 2**20:.0f} MiB, budget {self.table_budget / 2**20:.0f} MiB"
            )
        n = np.asarray(grid.counts)
        # strides of the zero-padded summed-area table, shape counts + 1
        strides = np.array([int(np.prod(n[i + 1 :] + 1)) for i in range(d)], dtype=np.int64)
        corners = list(itertools.product((0, 1), repeat=d))
        inside = np.empty((self.n_controls, grid.size), dtype=bool)
        empty = np.empty((self.n_controls, grid.size), dtype=bool)
        flat = np.empty((self.n_controls, len(corners), grid.size), dtype=np.int32)
        centers = grid.centers
        half = np.asarray(grid.widths) / 2
        for i, u in enumerate(self.controls):
            lo, hi = _axis_range(grid, *self.image_box(centers, half, u))
            inside[i] = np.all((lo >= 0) & (hi < n), axis=1)
            lo = np.clip(lo, 0, n - 1)
            hi = np.clip(hi, -1, n - 1) + 1
            empty[i] = np.any(hi <= lo, axis=1)
            for j, c in enumerate(corners):
                flat[i, j] = np.where(c, hi, lo) @ strides
        signs = np.array([-1 if (d - sum(c)) % 2 else 1 for c in corners])
        tab = CoverTable(inside, empty, flat, signs)
        self._tables[key] = tab
        return tab


@dataclass(frozen=True)
class CoverTable:
    """Per control: whether the image box stays in the grid, whether its
    clipped part is empty, and flat indices of its corners in a zero-padded
    summed-area table (combined with ``signs`` by inclusion-exclusion)."""

    inside: np.ndarray
    empty: np.ndarray
    corners: np.ndarray
    signs: np.ndarray


def _axis_range(grid: Grid, lo, hi):
    """Per-axis cell index range of boxes ``[lo, hi]`` (same convention as
    ``Grid.cell_index``: half-open cells, the upper grid face belongs to the
    last cell)."""
    L = np.asarray(grid.lower)
    U = np.asarray(grid.upper)
    w = np.asarray(grid.widths)
    n = np.asarray(grid.counts)
    # a relative slack of EPS absorbs rounding on exact cell faces
    ilo = np.floor((lo - L) / w + EPS).astype(np.int64)
    ihi = np.floor((hi - L) / w - EPS).astype(np.int64)
    ihi = np.where(hi == U, n - 1, ihi)
    return ilo, ihi


def linear_model(A, B, controls, disturbances, period, **kw) -> SystemModel:
    return SystemModel("linear", controls, disturbances, period, A=A, B=B, **kw)


def integrator_model(controls, disturbances, period=1.0, **kw) -> SystemModel:
    return SystemModel("integrator", controls, disturbances, period, **kw)


def robust_one_step_controls(m: SystemModel, x, target: GridSet) -> np.ndarray:
    """Boolean mask over ``m.controls``: ``u`` such that every sampled
    disturbance keeps ``f(x, u, w)`` inside ``target``."""
    x = np.asarray(x, dtype=float)
    grid = target.grid
    ok = np.ones(m.n_controls, dtype=bool)
    if m.abstraction == "cover":
        cube = target.mask.reshape(grid.counts)
        n = np.asarray(grid.counts)
        for i, u in enumerate(m.controls):
            lo, hi = m.image_box(x[None, :], np.zeros(x.size), u)
            ilo, ihi = (a[0] for a in _axis_range(grid, lo, hi))
            if np.any(ilo < 0) or np.any(ihi >= n):
                ok[i] = False
            else:
                ok[i] = bool(cube[tuple(slice(a, b + 1) for a, b in zip(ilo, ihi))].all())
        return ok
    for i, u in enumerate(m.controls):
        nxt = m.step(np.broadcast_to(x, (m.disturbances.shape[0], x.size)), u, m.disturbances)
        idx = grid.cell_index(nxt)
        ok[i] = bool(np.all(idx >= 0) and np.all(target.mask[idx]))
    return ok


class DisturbanceSource:
    """Emits one disturbance per step.

    Modes: ``zero``; ``uniform`` (seeded, over the model's W region);
    ``extreme`` (cycles the disturbance sample set, which holds the vertices
    of a box W); ``replay`` (rows of a given array, checked against W).
    """

    def __init__(self, model: SystemModel, mode: str = "zero", seed: int | None = None, replay=None):
        self.model = model
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.k = 0
        n = model.disturbances.shape[1]
        if mode == "replay":
            if replay is None:
                raise ConfigError("replay mode needs a disturbance array")
            self.replay = np.atleast_2d(np.asarray(replay, dtype=float))
            for w in self.replay:
                if not self._admissible(w):
                    raise ConfigError(f"replayed disturbance {w} lies outside W")
        elif mode == "uniform":
            if model.w_region is None:
                raise ConfigError("uniform disturbances need a W region")
        elif mode not in ("zero", "extreme"):
            raise ConfigError(f"unknown disturbance mode {mode!r}")
        self.n = n

    def _admissible(self, w) -> bool:
        if self.model.w_region is not None:
            return self.model.w_region.contains(w)
        lo = self.model.disturbances.min(axis=0)
        hi = self.model.disturbances.max(axis=0)
        return bool(np.all(w >= lo - 1e-9) and np.all(w <= hi + 1e-9))

    def __call__(self) -> np.ndarray:
        k = self.k
        self.k += 1
        if self.mode == "zero":
            return np.zeros(self.n)
        if self.mode == "uniform":
            return self.model.w_region.sample(self.rng)
        if self.mode == "extreme":
            ws = self.model.disturbances
            return ws[k % ws.shape[0]].copy()
        if k >= self.replay.shape[0]:
            raise ConfigError("replay disturbance file exhausted")
        return self.replay[k].copy()
