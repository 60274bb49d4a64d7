"""Scenario files: sectioned INI text parsed with exact decimals.

Sections::

    [scenario]    name, formula, x0, synthesize (branch name), slack
    [branches]    optional named formulas checked separately
    [system]      kind (linear | integrator), period, A, B (rows split by ';'),
                  u_shape (box | ball), u_lower/u_upper or u_radius,
                  u_samples (per axis), u_boundary (extra circle points),
                  w_shape, w_lower/w_upper or w_radius, w_samples,
                  reach_margin, abstraction (center | cover)
    [grid]        lower, upper, counts, raster (center | inner)
    [oncoming]    p_ini, v  (moving obstacle along the first axis)
    [predicate NAME]  shape = box | ball | halfspace | sweep | trailing
    [disturbance] mode, seed, realizations, replay
    [output]      directory

``sweep`` is the box swept by the oncoming obstacle between ``t_from`` and
``t_to`` on the first axis, ``trailing`` everything behind its position at
``t`` (both restricted to ``y_lower <= x2 <= y_upper``).  The obstacle's
position is ``p_ini + v * t``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Optional

import numpy as np

from . import formula as F
from .errors import ConfigError
from .gridset import Grid
from .predicates import PredicateDef, ball, box, halfspace
from .system import (
    SystemModel,
    ball_region,
    ball_samples,
    box_region,
    box_samples,
    box_vertices,
    circle_samples,
    integrator_model,
    linear_model,
)


def _num(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf"):
        return float("inf")
    if t == "-inf":
        return float("-inf")
    try:
        return float(Decimal(t))
    except InvalidOperation:
        raise ConfigError(f"not a number: {text!r}") from None


def _vec(text: str) -> list[float]:
    return [_num(p) for p in text.replace(",", " ").split()]


def _matrix(text: str) -> np.ndarray:
    rows = [_vec(r) for r in text.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix {text!r}")
    return np.array(rows, dtype=float)


@dataclass
class ScenarioConfig:
    name: str
    formula: str
    branches: dict
    x0: np.ndarray
    model: SystemModel
    grid: Grid
    predicates: dict
    disturbance_mode: str = "uniform"
    seed: int = 0
    realizations: int = 1
    replay: Optional[str] = None
    out_dir: str = "out"
    synthesize: Optional[str] = None
    slack: int = 5
    raster: str = "center"
    source: dict = field(default_factory=dict)

    def formulas(self) -> dict:
        """Main formula first, then named branches."""
        out = {"main": self.formula}
        out.update(self.branches)
        return out

    def parsed(self, name: str = "main") -> F.Formula:
        try:
            text = self.formulas()[name]
        except KeyError:
            raise ConfigError(f"unknown formula {name!r}") from None
        return F.parse(text, self.predicates)


def _region_and_samples(sec, prefix, dim_hint):
    shape = sec.get(f"{prefix}_shape", "box").strip()
    if shape == "box":
        lo = _vec(sec[f"{prefix}_lower"])
        hi = _vec(sec[f"{prefix}_upper"])
        counts = sec.get(f"{prefix}_samples", "").strip()
        if counts in ("", "vertices"):
            pts = box_vertices(lo, hi)
        else:
            per = [int(c) for c in counts.split()]
            if len(per) == 1:
                per = per * len(lo)
            pts = box_samples(lo, hi, per)
        return box_region(lo, hi), pts
    if shape == "ball":
        r = _num(sec[f"{prefix}_radius"])
        dim = int(sec.get(f"{prefix}_dim", str(dim_hint)))
        kind = sec.get(f"{prefix}_samples", "9").strip()
        if kind.startswith("circle"):
            count = int(kind.split()[1])
            pts = circle_samples(r, count)
        else:
            pts = ball_samples(r, dim, int(kind), boundary=int(sec.get(f"{prefix}_boundary", "0")))
        return ball_region(r, dim), pts
    raise ConfigError(f"unknown {prefix} shape {shape!r}")


def _predicate(name, sec, oncoming) -> PredicateDef:
    shape = sec.get("shape", "").strip()
    if shape == "box":
        return box(name, _vec(sec["lower"]), _vec(sec["upper"]))
    if shape == "ball":
        return ball(name, _vec(sec["center"]), _num(sec["radius"]))
    if shape == "halfspace":
        return halfspace(name, _vec(sec["normal"]), _num(sec["offset"]))
    if shape in ("sweep", "trailing"):
        if oncoming is None:
            raise ConfigError(f"predicate {name!r} needs an [oncoming] section")
        p_ini, v = oncoming
        pos = lambda t: float(Decimal(p_ini) + Decimal(v) * Decimal(t))
        ylo, yhi = _num(sec["y_lower"]), _num(sec["y_upper"])
        dim = int(sec.get("dim", "3"))
        rest_lo = [-np.inf] * (dim - 2)
        rest_hi = [np.inf] * (dim - 2)
        if shape == "sweep":
            a, b = pos(sec["t_to"].strip()), pos(sec["t_from"].strip())
            lo, hi = min(a, b), max(a, b)
            return box(name, [lo, ylo, *rest_lo], [hi, yhi, *rest_hi])
        return box(name, [-np.inf, ylo, *rest_lo], [pos(sec["t"].strip()), yhi, *rest_hi])
    raise ConfigError(f"predicate {name!r}: unknown shape {shape!r}")


def load(path: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep predicate names as written
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path!r}")
    return from_parser(cp)


def loads(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(text)
    return from_parser(cp)


def from_parser(cp: configparser.ConfigParser) -> ScenarioConfig:
    for req in ("scenario", "system", "grid"):
        if not cp.has_section(req):
            raise ConfigError(f"missing [{req}] section")
    sc = cp["scenario"]
    sysc = cp["system"]
    gc = cp["grid"]

    grid = Grid(_vec(gc["lower"]), _vec(gc["upper"]), [int(c) for c in gc["counts"].split()])
    raster = gc.get("raster", "center").strip()
    if raster not in ("center", "inner"):
        raise ConfigError(f"unknown raster mode {raster!r}")
    n = grid.ndim
    kind = sysc.get("kind", "linear").strip()
    period = _num(sysc.get("period", "1"))
    u_region, U = _region_and_samples(sysc, "u", n)
    w_region, W = _region_and_samples(sysc, "w", n)
    margin = sysc.get("reach_margin", "").strip()
    margin_t = tuple(_vec(margin)) if margin else None
    extra = {"abstraction": sysc.get("abstraction", "center").strip()}
    if kind == "linear":
        model = linear_model(
            _matrix(sysc["A"]), _matrix(sysc["B"]), U, W, period,
            u_region=u_region, w_region=w_region, reach_margin=margin_t, name=sc.get("name", "scenario"), **extra,
        )
    elif kind == "integrator":
        model = integrator_model(
            U, W, period, u_region=u_region, w_region=w_region, reach_margin=margin_t, name=sc.get("name", "scenario"), **extra
        )
    else:
        raise ConfigError(f"unknown system kind {kind!r}")
    if W.shape[1] != n:
        raise ConfigError(f"disturbance dimension {W.shape[1]} does not match grid dimension {n}")

    oncoming = None
    if cp.has_section("oncoming"):
        oncoming = (cp["oncoming"]["p_ini"].strip(), cp["oncoming"]["v"].strip())
    preds = {}
    for sec_name in cp.sections():
        if sec_name.startswith("predicate "):
            name = sec_name.split(None, 1)[1].strip()
            preds[name] = _predicate(name, cp[sec_name], oncoming)

    branches = dict(cp["branches"]) if cp.has_section("branches") else {}
    formula = sc.get("formula", "").strip()
    if not formula:
        raise ConfigError("scenario has no formula")
    for text in [formula, *branches.values()]:
        F.parse(text, preds)  # validates predicate ids early

    x0 = np.array(_vec(sc["x0"]))
    if x0.size != n or grid.cell_index(x0) < 0:
        raise ConfigError(f"initial state {x0} outside the grid")
    dc = cp["disturbance"] if cp.has_section("disturbance") else {}
    out = cp["output"].get("directory", "out") if cp.has_section("output") else "out"
    synth = sc.get("synthesize", "").strip() or None
    if synth is not None and synth != "main" and synth not in branches:
        raise ConfigError(f"synthesize refers to unknown branch {synth!r}")
    return ScenarioConfig(
        name=sc.get("name", "scenario"),
        formula=formula,
        branches=branches,
        x0=x0,
        model=model,
        grid=grid,
        predicates=preds,
        disturbance_mode=dc.get("mode", "uniform").strip() if dc else "uniform",
        seed=int(dc.get("seed", "0")) if dc else 0,
        realizations=int(dc.get("realizations", "1")) if dc else 1,
        replay=(dc.get("replay") or None) if dc else None,
        out_dir=out,
        synthesize=synth,
        slack=int(sc.get("slack", "5")),
        raster=raster,
        source={s: dict(cp[s]) for s in cp.sections()},
    )
