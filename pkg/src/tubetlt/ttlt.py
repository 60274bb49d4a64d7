"""Tube-based temporal logic trees.

A tree alternates tube nodes (step-indexed cell sets) and operator nodes
(``and``, ``or``, ``until``, ``always``).  It is built bottom-up from a PNF
formula:

* a temporal-free subformula becomes one leaf, its rasterized satisfaction set
  (``true`` is the whole working space);
* ``l & r`` / ``l | r`` get a new root, the slice-wise intersection / union;
* ``l U[a,b] r``: every leaf ``Y`` of the tree of ``l`` is replaced by the
  maximal tube towards slice 0 of the root of a fresh copy of the tree of
  ``r`` under constraint ``Y``; ancestors are then recomputed;
* ``G[a,b] c``: root is the complement of the minimal tube towards the
  complement of slice 0 of the root of ``c``.

Trees built from Boolean combinations of *chains* are sound for trajectory
checking (see :func:`in_sound_fragment`).  A chain is ``c`` temporal-free,
``c U_I chain`` with ``c`` temporal-free, or ``G_I c`` with ``c`` temporal-free.
Outside that fragment the leaf substitution above checks a nested operand
only once (``G[1,2] (p & G[2,2] q)`` would accept trajectories violating it),
so :func:`construct` first rewrites such formulas into an equivalent Boolean
combination of chains (:func:`chain_form`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import formula as F
from .errors import InsufficientSignalError, UnsupportedFormulaError
from .gridset import Grid, GridSet
from .predicates import PredicateDef
from .reach import Tube, TubeCache
from .system import SystemModel


@dataclass
class TubeNode:
    id: int
    kind: str  # "leaf" | "bool" | "until" | "always"
    label: str
    tube: Tube
    op: Optional[int] = None  # operator child
    parent: Optional[int] = None  # operator parent
    constraint: Optional[GridSet] = None  # until nodes: the replaced leaf's set

    @property
    def is_leaf(self) -> bool:
        return self.op is None


@dataclass
class OpNode:
    id: int
    kind: str  # "and" | "or" | "until" | "always"
    interval: Optional[tuple[int, int]]
    parent: int
    children: list[int] = field(default_factory=list)

    @property
    def is_boolean(self) -> bool:
        return self.kind in ("and", "or")

    @property
    def span(self) -> int:
        """Number of steps the operator occupies (0 for Boolean)."""
        return 0 if self.interval is None else self.interval[1]


@dataclass(frozen=True)
class CompletePath:
    nodes: tuple  # alternating tube / operator ids, root first, leaf last

    @property
    def tube_ids(self) -> tuple:
        return self.nodes[0::2]

    @property
    def op_ids(self) -> tuple:
        return self.nodes[1::2]


# ---------------------------------------------------------------------------
# skeleton


class _Sk:
    def __init__(self, kind, label, op=None, interval=None, children=None, leaf_set=None, constraint=None):
        self.kind = kind
        self.label = label
        self.op = op
        self.interval = interval
        self.children = children or []
        self.leaf_set = leaf_set
        self.constraint = constraint
        self.tube: Tube | None = None


_FLIP = {"center": "center", "inner": "outer", "outer": "inner"}


def rasterize(f: F.Formula, grid: Grid, predicates, mode: str = "center") -> GridSet:
    """Cell set of a temporal-free formula.

    ``mode="inner"`` keeps only cells on which the formula holds at every
    point (a negated predicate uses the cells missing its set), so a state in
    the result satisfies the formula; ``center`` judges a cell by its centre.
    """
    if isinstance(f, F.TrueF):
        return GridSet.full(grid)
    if isinstance(f, F.Pred):
        return GridSet.from_predicate(_lookup(predicates, f.name), grid, mode=mode)
    if isinstance(f, F.NegPred):
        return GridSet.from_predicate(_lookup(predicates, f.name), grid, mode=_FLIP[mode]).complement()
    if isinstance(f, F.Not):
        return rasterize(f.child, grid, predicates, _FLIP[mode]).complement()
    if isinstance(f, F.And):
        return rasterize(f.left, grid, predicates, mode) & rasterize(f.right, grid, predicates, mode)
    if isinstance(f, F.Or):
        return rasterize(f.left, grid, predicates, mode) | rasterize(f.right, grid, predicates, mode)
    raise UnsupportedFormulaError(f"{F.to_sexpr(f)} is not temporal-free")


def _lookup(predicates, name) -> PredicateDef:
    try:
        return predicates[name]
    except KeyError:
        from .errors import UnknownPredicateError

        raise UnknownPredicateError(f"unknown predicate {name!r}") from None


def _skeleton(f, grid, predicates, period, raster="center"):
    if F.is_temporal_free(f):
        return _Sk("leaf", F.to_sexpr(f), leaf_set=rasterize(f, grid, predicates, raster))
    if isinstance(f, (F.And, F.Or)):
        op = "and" if isinstance(f, F.And) else "or"
        kids = [_skeleton(f.left, grid, predicates, period, raster), _skeleton(f.right, grid, predicates, period, raster)]
        return _Sk("bool", F.to_sexpr(f), op=op, children=kids)
    if isinstance(f, F.Always):
        kid = _skeleton(f.child, grid, predicates, period, raster)
        return _Sk("always", F.to_sexpr(f), op="always", interval=f.interval.steps(period), children=[kid])
    if isinstance(f, F.Until):
        steps = f.interval.steps(period)
        right_label = F.to_sexpr(f.right)

        def substitute(node):
            if node.kind == "leaf":
                kid = _skeleton(f.right, grid, predicates, period, raster)
                label = f"(until {f.interval} {node.label} {right_label})"
                return _Sk("until", label, op="until", interval=steps, children=[kid], constraint=node.leaf_set)
            node.children = [substitute(c) for c in node.children]
            return node

        return substitute(_skeleton(f.left, grid, predicates, period, raster))
    if isinstance(f, F.Eventually):
        return _skeleton(F.Until(F.TRUE, f.child, f.interval), grid, predicates, period, raster)
    raise UnsupportedFormulaError(f"{F.to_sexpr(f)} is not in positive normal form")


def _combine(tubes, op, grid) -> Tube:
    fn = np.logical_and if op == "and" else np.logical_or
    if all(t.constant for t in tubes):
        mask = fn.reduce([t.slices[0] for t in tubes])
        mask.setflags(write=False)
        return Tube(grid, (mask,), constant=True)
    length = min(len(t) for t in tubes if not t.constant)
    memo: dict = {}
    slices = []
    for k in range(length):
        parts = [t.at(k).mask for t in tubes]
        key = tuple(id(p) for p in parts)
        if key not in memo:
            m = fn.reduce(parts)
            m.setflags(write=False)
            memo[key] = m
        slices.append(memo[key])
    return Tube(grid, tuple(slices))


def _complement_tube(t: Tube) -> Tube:
    memo: dict = {}
    out = []
    for s in t.slices:
        if id(s) not in memo:
            c = ~s
            c.setflags(write=False)
            memo[id(s)] = c
        out.append(memo[id(s)])
    return Tube(t.grid, tuple(out), constant=t.constant)


def _compute(sk: _Sk, model, grid, cache: TubeCache):
    for c in sk.children:
        _compute(c, model, grid, cache)
    if sk.kind == "leaf":
        sk.tube = Tube.from_set(sk.leaf_set)
    elif sk.kind == "bool":
        sk.tube = _combine([c.tube for c in sk.children], sk.op, grid)
    elif sk.kind == "until":
        target = sk.children[0].tube.at(0)
        sk.tube = cache.max_reach(model, target, sk.constraint, sk.interval)
    elif sk.kind == "always":
        bad = sk.children[0].tube.at(0).complement()
        sk.tube = _complement_tube(cache.min_reach(model, bad, sk.interval))


# ---------------------------------------------------------------------------
# tree


class Ttlt:
    """Arena of tube and operator nodes numbered in preorder (root is 0)."""

    def __init__(self, nodes, grid: Grid, model: SystemModel, formula: F.Formula, period: float, structure=None):
        self.nodes = nodes
        self.structure = formula if structure is None else structure
        self.grid = grid
        self.model = model
        self.formula = formula
        self.period = period

    root = 0

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, i):
        return self.nodes[i]

    def tube_nodes(self) -> list[TubeNode]:
        return [n for n in self.nodes if isinstance(n, TubeNode)]

    def op_nodes(self) -> list[OpNode]:
        return [n for n in self.nodes if isinstance(n, OpNode)]

    def leaves(self) -> list[TubeNode]:
        return [n for n in self.tube_nodes() if n.is_leaf]

    def op_of(self, tid: int) -> OpNode | None:
        op = self.nodes[tid].op
        return None if op is None else self.nodes[op]

    def children_of(self, tid: int) -> list[int]:
        """Tube-node children of a tube node (through its operator)."""
        op = self.op_of(tid)
        return [] if op is None else list(op.children)

    def pre(self, tid: int) -> int | None:
        """Tube-node parent of a tube node."""
        p = self.nodes[tid].parent
        return None if p is None else self.nodes[p].parent

    def by_label(self, label: str) -> list[TubeNode]:
        return [n for n in self.tube_nodes() if n.label == label]

    def boolean_closure(self, tid: int) -> list[int]:
        """Tube nodes reachable from ``tid`` through Boolean operators only
        (``tid`` excluded)."""
        out = []
        stack = [tid]
        while stack:
            t = stack.pop()
            op = self.op_of(t)
            if op is not None and op.is_boolean:
                for c in op.children:
                    out.append(c)
                    stack.append(c)
        return sorted(out)

    def descendants(self, tid: int) -> list[int]:
        out = []
        stack = self.children_of(tid)
        while stack:
            t = stack.pop()
            out.append(t)
            stack.extend(self.children_of(t))
        return sorted(out)

    def complete_paths(self) -> list[CompletePath]:
        paths = []

        def walk(tid, acc):
            op = self.nodes[tid].op
            if op is None:
                paths.append(CompletePath(tuple(acc + [tid])))
                return
            for c in self.nodes[op].children:
                walk(c, acc + [tid, op])

        walk(self.root, [])
        return paths

    def path_to(self, leaf: int) -> CompletePath:
        for p in self.complete_paths():
            if p.nodes[-1] == leaf:
                return p
        raise KeyError(leaf)


def construct(
    f: F.Formula,
    model: SystemModel,
    grid: Grid,
    predicates,
    cache: TubeCache | None = None,
    normalize: bool = True,
    raster: str = "center",
) -> Ttlt:
    """Build the tree of ``f`` (converted to PNF with Eventually desugared).

    With ``normalize`` a formula outside the chain fragment is first
    rewritten by :func:`chain_form`; ``tree.formula`` keeps the original and
    ``tree.structure`` the formula the tree was built from.  ``raster``
    selects how leaves are rasterized (see :func:`rasterize`); ``inner``
    makes certified trajectories satisfy the formula pointwise.
    """
    g = F.desugar(F.to_pnf(f))
    F.horizon(g)  # rejects unbounded intervals early
    built = g
    if normalize and not in_sound_fragment(g):
        built = chain_form(g, model.period)
    sk = _skeleton(built, grid, predicates, model.period, raster)
    _compute(sk, model, grid, cache or TubeCache())
    nodes: list = []

    def flatten(s: _Sk, parent_op):
        tid = len(nodes)
        kind = "leaf" if s.kind == "leaf" else s.kind
        node = TubeNode(tid, kind, s.label, s.tube, parent=parent_op, constraint=s.constraint)
        nodes.append(node)
        if s.kind != "leaf":
            oid = len(nodes)
            op = OpNode(oid, s.op, s.interval, parent=tid)
            nodes.append(op)
            node.op = oid
            for c in s.children:
                op.children.append(flatten(c, oid))
        return tid

    flatten(sk, None)
    return Ttlt(nodes, grid, model, g, model.period, structure=built)


def node_bound(f: F.Formula) -> int:
    """Size bound ``4 N (N + M) + 1`` with ``N`` taken as at least 1."""
    n, m = F.count_operators(F.desugar(F.to_pnf(f)))
    n = max(n, 1)
    return 4 * n * (n + m) + 1


def check_alternation(t: Ttlt) -> bool:
    for n in t.nodes:
        if isinstance(n, TubeNode):
            if n.op is not None and not isinstance(t.nodes[n.op], OpNode):
                return False
        else:
            if not n.children or not all(isinstance(t.nodes[c], TubeNode) for c in n.children):
                return False
            if n.is_boolean != (len(n.children) == 2):
                return False
    root = t.nodes[t.root]
    return isinstance(root, TubeNode) and all(isinstance(l, TubeNode) for l in t.leaves())


def in_sound_fragment(f: F.Formula) -> bool:
    """Boolean combinations of chains (see module docstring)."""

    def top(h):
        if isinstance(h, (F.And, F.Or)) and not F.is_temporal_free(h):
            return top(h.left) and top(h.right)
        return _is_chain(h)

    return top(F.desugar(F.to_pnf(f)))


def _is_chain(h) -> bool:
    if F.is_temporal_free(h):
        return True
    if isinstance(h, F.Until):
        return F.is_temporal_free(h.left) and _is_chain(h.right)
    if isinstance(h, F.Always):
        return F.is_temporal_free(h.child)
    return False


def _fold(cls, parts):
    out = parts[0]
    for p in parts[1:]:
        out = cls(out, p)
    return out


def _at(j: int, g, period: float):
    """``F[j,j] g`` for ``g`` a Boolean combination of chains, kept in that form."""
    if j == 0:
        return g
    if isinstance(g, (F.And, F.Or)) and not F.is_temporal_free(g):
        return type(g)(_at(j, g.left, period), _at(j, g.right, period))
    if isinstance(g, F.Until) and isinstance(g.left, F.TrueF):
        lo, hi = g.interval.steps(period)
        if lo == hi:
            # F[j,j] F[i,i] g == F[j+i,j+i] g
            return _at(j + lo, g.right, period)
    return F.Until(F.TRUE, g, F.Interval(j * period, j * period))


def chain_form(f, period: float):
    """Rewrite a desugared PNF formula into an equivalent Boolean combination
    of chains, using ``G[a,b] g == AND_j F[j,j] g`` and
    ``l U[a,b] r == OR_k (F[k,k] r AND AND_{j<k} F[j,j] l)`` over steps."""
    if F.is_temporal_free(f):
        return f
    if isinstance(f, (F.And, F.Or)):
        return type(f)(chain_form(f.left, period), chain_form(f.right, period))
    if isinstance(f, F.Always):
        c = chain_form(f.child, period)
        if F.is_temporal_free(c):
            return F.Always(c, f.interval)
        a, b = f.interval.steps(period)
        return _fold(F.And, [_at(j, c, period) for j in range(a, b + 1)])
    if isinstance(f, F.Until):
        left = chain_form(f.left, period)
        right = chain_form(f.right, period)
        if F.is_temporal_free(left) and _is_chain(right):
            return F.Until(left, right, f.interval)
        a, b = f.interval.steps(period)
        terms = []
        for k in range(a, b + 1):
            parts = [_at(k, right, period)] + [_at(j, left, period) for j in range(k)]
            terms.append(_fold(F.And, parts))
        return _fold(F.Or, terms)
    raise UnsupportedFormulaError(f"{F.to_sexpr(f)} is not in positive normal form")


# ---------------------------------------------------------------------------
# fragments and compression


def mtf_decompose(t: Ttlt, p: CompletePath) -> list[list[int]]:
    """Split a complete path at Boolean operator nodes."""
    frags: list[list[int]] = [[p.nodes[0]]]
    for i in range(1, len(p.nodes), 2):
        op = t.nodes[p.nodes[i]]
        nxt = p.nodes[i + 1]
        if op.is_boolean:
            frags.append([nxt])
        else:
            frags[-1].extend([p.nodes[i], nxt])
    return frags


@dataclass
class CNode:
    id: int
    kind: str  # "set" | "and" | "or"
    members: tuple = ()  # tube node ids of the fragment (set nodes)
    children: list = field(default_factory=list)


@dataclass
class CompressedTree:
    nodes: list

    def leaves(self) -> list[CNode]:
        return [n for n in self.nodes if n.kind == "set" and not n.children]

    def __len__(self):
        return len(self.nodes)


def compress(t: Ttlt) -> CompressedTree:
    """Replace every maximal temporal fragment by one set node."""
    nodes: list[CNode] = []

    def build(tid):
        members = [tid]
        cur = tid
        while True:
            op = t.op_of(cur)
            if op is None or op.is_boolean:
                break
            cur = op.children[0]
            members.append(cur)
        cn = CNode(len(nodes), "set", tuple(members))
        nodes.append(cn)
        op = t.op_of(cur)
        if op is not None:
            on = CNode(len(nodes), op.kind)
            nodes.append(on)
            cn.children.append(on.id)
            for c in op.children:
                on.children.append(build(c))
        return cn.id

    build(t.root)
    return CompressedTree(nodes)


def backtrack(ct: CompressedTree, values: dict, both: Callable, either: Callable, empty):
    """Bottom-up evaluation: ``and`` combines children with ``both``, ``or``
    with ``either``; a set node joins its own value with its operator's."""

    def val(i):
        n = ct.nodes[i]
        if n.kind == "set":
            own = values.get(i, empty)
            if not n.children:
                return own
            return either(own, val(n.children[0]))
        kids = [val(c) for c in n.children]
        acc = kids[0]
        for k in kids[1:]:
            acc = both(acc, k) if n.kind == "and" else either(acc, k)
        return acc

    return val(0)


def backtrack_bool(ct: CompressedTree, labels: dict) -> bool:
    return bool(backtrack(ct, labels, lambda a, b: a and b, lambda a, b: a or b, False))


# ---------------------------------------------------------------------------
# trajectory checks


def coding_constraints(t: Ttlt, p: CompletePath) -> list[tuple]:
    """Symbolic conditions a time coding of ``p`` must meet.

    Entries, with ``i``/``j`` tube node ids:
    ``("eq", j, i)`` k_j = k_i;  ``("in", j, i, a, b)`` k_j in k_i + [a, b];
    ``("last", j, i, a, b)`` k_j = k_i + b;  ``("track", i, j)`` x_k in
    X_i(k - k_i) for k in [k_i, k_j];  ``("hold", i, j)`` x_k in the until
    constraint of X_i for k in [k_i, k_j) (omitted when it is the whole
    space);  ``("final", i)`` x_{k_i} in X_i(0).
    """
    out = []
    tubes = p.tube_ids
    for n, oid in enumerate(p.op_ids):
        i, j = tubes[n], tubes[n + 1]
        op = t.nodes[oid]
        if op.is_boolean:
            out.append(("eq", j, i))
        elif op.kind == "until":
            out.append(("in", j, i, *op.interval))
        else:
            out.append(("last", j, i, *op.interval))
    for n in range(len(tubes) - 1):
        i, j = tubes[n], tubes[n + 1]
        out.append(("track", i, j))
        con = t.nodes[i].constraint
        if t.nodes[i].kind == "until" and con is not None and con.count() < con.grid.size:
            out.append(("hold", i, j))
    out.append(("final", tubes[-1]))
    return out


def path_satisfies(x: F.Signal, p: CompletePath, t: Ttlt, strict: bool = False):
    """Search a time coding of ``p`` for the trajectory ``x``.

    Returns ``(ok, coding)`` where ``coding`` maps tube ids to activation
    steps.  Steps past the end of ``x`` make a coding fail, or raise when
    ``strict``.
    """
    grid = t.grid
    samples = x.samples
    n_steps = len(x)
    cells = grid.cell_index(samples)
    tubes = p.tube_ids
    ops = [t.nodes[o] for o in p.op_ids]

    def inside(tid, k, rel):
        if k >= n_steps:
            if strict:
                raise InsufficientSignalError(f"trajectory ends at step {n_steps - 1}, path needs {k}")
            return False
        c = cells[k]
        return c >= 0 and bool(t.nodes[tid].tube.at(rel).mask[c])

    def hold(tid, k):
        con = t.nodes[tid].constraint
        c = cells[k]
        return con is None or (c >= 0 and bool(con.mask[c]))

    @lru_cache(maxsize=None)
    def sat(pos, kappa):
        tid = tubes[pos]
        if pos == len(ops):
            return (kappa,) if inside(tid, kappa, 0) else None
        op = ops[pos]
        if op.is_boolean:
            if not inside(tid, kappa, 0):
                return None
            rest = sat(pos + 1, kappa)
            return None if rest is None else (kappa, *rest)
        a, b = op.interval
        if op.kind == "always":
            for k in range(kappa, kappa + b + 1):
                if not inside(tid, k, k - kappa):
                    return None
            rest = sat(pos + 1, kappa + b)
            return None if rest is None else (kappa, *rest)
        for kp in range(kappa, kappa + b + 1):
            if not inside(tid, kp, kp - kappa):
                return None
            if kp >= kappa + a:
                rest = sat(pos + 1, kp)
                if rest is not None:
                    return (kappa, *rest)
            if not hold(tid, kp):
                return None
        return None

    res = sat(0, 0)
    if res is None:
        return False, None
    return True, dict(zip(tubes, res))


def tree_satisfies(x: F.Signal, t: Ttlt, strict: bool = False, witness: bool = False):
    """Label every compressed leaf by its complete path and backtrack."""
    ct = compress(t)
    labels = {}
    codings = {}
    for leaf in ct.leaves():
        p = t.path_to(leaf.members[-1])
        ok, coding = path_satisfies(x, p, t, strict=strict)
        labels[leaf.id] = ok
        if ok:
            codings[p.nodes[-1]] = coding
    verdict = backtrack_bool(ct, labels)
    return (verdict, codings) if witness else verdict


def export_tree(t: Ttlt) -> dict:
    nodes = []
    edges = []
    for n in t.nodes:
        if isinstance(n, TubeNode):
            nodes.append(
                {
                    "id": n.id,
                    "type": "tube",
                    "kind": n.kind,
                    "label": n.label,
                    "horizon": n.tube.K,
                    "constant": n.tube.constant,
                    "cells_at_0": n.tube.at(0).count(),
                }
            )
            if n.op is not None:
                edges.append([n.id, n.op])
        else:
            nodes.append({"id": n.id, "type": "operator", "kind": n.kind, "interval": n.interval})
            edges.extend([n.id, c] for c in n.children)
    return {
        "formula": F.to_sexpr(t.formula),
        "structure": F.to_sexpr(t.structure),
        "period": t.period,
        "grid": {"lower": t.grid.lower, "upper": t.grid.upper, "counts": t.grid.counts},
        "nodes": nodes,
        "edges": edges,
        "complete_paths": [list(p.nodes) for p in t.complete_paths()],
    }
