"""STL abstract syntax, parsing, positive normal form and Boolean semantics.

Formulas are immutable dataclasses.  Intervals are stored in seconds and
mapped to sampling steps only when a period is known::

    closed    [a, b]  ->  [ceil(a/delta), floor(b/delta)]
    half-open [a, b)  ->  [ceil(a/delta), ceil(b/delta) - 1]

so the step window always lies inside the real-time window.

Until is evaluated with the constraint holding on ``[k, k')`` (up to but
excluding the instant the right operand is reached).  This is the reading
under which adjacent regions can be chained, and the reachability tubes in
:mod:`tubetlt.reach` follow the same convention.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import (
    DomainError,
    FormulaSyntaxError,
    HorizonError,
    InsufficientSignalError,
    IntervalError,
    UnknownPredicateError,
    UnsupportedFormulaError,
)
from .predicates import PredicateDef

_EPS = 1e-9


@dataclass(frozen=True)
class Interval:
    a: float
    b: float
    right_closed: bool = True

    def __post_init__(self):
        if not math.isfinite(self.a) or self.a < 0:
            raise IntervalError(f"interval lower end must be finite and >= 0, got {self.a}")
        if self.b < self.a:
            raise IntervalError(f"malformed interval [{self.a}, {self.b}]: a > b")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.b)

    def steps(self, period: float) -> tuple[int, int]:
        """Integer step window contained in the real-time window."""
        if not self.bounded:
            raise HorizonError("unbounded interval has no finite step window")
        lo = math.ceil(self.a / period - _EPS)
        if self.right_closed:
            hi = math.floor(self.b / period + _EPS)
        else:
            hi = math.ceil(self.b / period - _EPS) - 1
        if hi < lo:
            raise IntervalError(f"interval {self} is empty at period {period}")
        return lo, hi

    def __str__(self):
        close = "]" if self.right_closed else ")"
        return f"[{_num(self.a)},{_num(self.b)}{close}"


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Pred:
    name: str


@dataclass(frozen=True)
class NegPred:
    name: str


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"
    interval: Interval


@dataclass(frozen=True)
class Always:
    child: "Formula"
    interval: Interval


@dataclass(frozen=True)
class Eventually:
    child: "Formula"
    interval: Interval


Formula = Union[TrueF, Pred, NegPred, Not, And, Or, Until, Always, Eventually]

TRUE = TrueF()


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<interval>\[[^\]\)]*[\]\)])|(?P<op>[!&|()~¬∧∨⊤])|(?P<word>[A-Za-z_][A-Za-z0-9_]*))"
)
_TEMPORAL = {"U", "G", "F"}


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise FormulaSyntaxError(f"unexpected character {text[pos:].lstrip()[:1]!r}", pos)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "op":
            value = {"~": "!", "¬": "!", "∧": "&", "∨": "|", "⊤": "true"}.get(value, value)
            if value == "true":
                kind = "word"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _parse_interval(raw: str, pos: int) -> Interval:
    body = raw[1:-1]
    parts = body.split(",")
    if len(parts) != 2:
        raise FormulaSyntaxError(f"malformed interval {raw!r}", pos)
    try:
        a, b = (float(p.strip()) for p in parts)
    except ValueError:
        raise FormulaSyntaxError(f"malformed interval bounds {raw!r}", pos) from None
    return Interval(a, b, right_closed=raw.endswith("]") and math.isfinite(b))


class _Parser:
    def __init__(self, text: str, predicates):
        self.tokens = _tokenize(text)
        self.i = 0
        self.predicates = predicates

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind, value=None):
        tok = self.take()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            raise FormulaSyntaxError(f"expected {want!r}, found {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def parse(self):
        f = self.disjunction()
        tok = self.peek()
        if tok[0] != "end":
            raise FormulaSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return f

    def disjunction(self):
        f = self.conjunction()
        while self.peek()[1] == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self):
        f = self.until()
        while self.peek()[1] == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self):
        left = self.unary()
        tok = self.peek()
        if tok[0] == "word" and tok[1] == "U":
            self.take()
            iv = self.interval()
            return Until(left, self.until(), iv)
        return left

    def interval(self):
        tok = self.expect("interval")
        return _parse_interval(tok[1], tok[2])

    def unary(self):
        kind, value, pos = self.peek()
        if value == "!":
            self.take()
            return Not(self.unary())
        if kind == "word" and value in ("G", "F"):
            self.take()
            iv = self.interval()
            child = self.unary()
            return Always(child, iv) if value == "G" else Eventually(child, iv)
        if value == "(":
            self.take()
            f = self.disjunction()
            self.expect("op", ")")
            return f
        if kind == "word":
            self.take()
            if value == "true":
                return TRUE
            if value in _TEMPORAL:
                raise FormulaSyntaxError(f"operator {value!r} without operand", pos)
            if self.predicates is not None and value not in self.predicates:
                raise UnknownPredicateError(f"unknown predicate {value!r} at position {pos}")
            return Pred(value)
        raise FormulaSyntaxError(f"unexpected token {value or 'end of input'!r}", pos)


def parse(text: str, predicates: Mapping[str, PredicateDef] | None = None) -> Formula:
    """Parse formula text.

    Precedence from tightest: ``!``, temporal operators (``G[a,b]``,
    ``F[a,b]`` prefix, ``U[a,b]`` infix and right-associative), ``&``, ``|``.
    ``true`` denotes the constant-true formula.  When ``predicates`` is given
    every identifier must be one of its keys.
    """
    return _Parser(text, predicates).parse()


# ---------------------------------------------------------------------------
# rewriting


def to_pnf(f: Formula) -> Formula:
    """Push negations down to predicates. Negated Until is rejected."""
    return _pnf(f, negate=False)


def _pnf(f, negate):
    if isinstance(f, TrueF):
        if negate:
            raise UnsupportedFormulaError("negated 'true' has no positive normal form here")
        return f
    if isinstance(f, Pred):
        return NegPred(f.name) if negate else f
    if isinstance(f, NegPred):
        return Pred(f.name) if negate else f
    if isinstance(f, Not):
        return _pnf(f.child, not negate)
    if isinstance(f, And):
        l, r = _pnf(f.left, negate), _pnf(f.right, negate)
        return Or(l, r) if negate else And(l, r)
    if isinstance(f, Or):
        l, r = _pnf(f.left, negate), _pnf(f.right, negate)
        return And(l, r) if negate else Or(l, r)
    if isinstance(f, Always):
        c = _pnf(f.child, negate)
        return Eventually(c, f.interval) if negate else Always(c, f.interval)
    if isinstance(f, Eventually):
        c = _pnf(f.child, negate)
        return Always(c, f.interval) if negate else Eventually(c, f.interval)
    if isinstance(f, Until):
        if negate:
            # the positive grammar has no release operator
            raise UnsupportedFormulaError(f"negated Until {to_sexpr(f)} has no positive normal form")
        return Until(_pnf(f.left, False), _pnf(f.right, False), f.interval)
    raise TypeError(f"not a formula: {f!r}")


def desugar(f: Formula) -> Formula:
    """Replace every ``F_I phi`` by ``true U_I phi``."""
    if isinstance(f, (TrueF, Pred, NegPred)):
        return f
    if isinstance(f, Not):
        return Not(desugar(f.child))
    if isinstance(f, And):
        return And(desugar(f.left), desugar(f.right))
    if isinstance(f, Or):
        return Or(desugar(f.left), desugar(f.right))
    if isinstance(f, Until):
        return Until(desugar(f.left), desugar(f.right), f.interval)
    if isinstance(f, Always):
        return Always(desugar(f.child), f.interval)
    if isinstance(f, Eventually):
        return Until(TRUE, desugar(f.child), f.interval)
    raise TypeError(f"not a formula: {f!r}")


def is_temporal_free(f: Formula) -> bool:
    if isinstance(f, (TrueF, Pred, NegPred)):
        return True
    if isinstance(f, Not):
        return is_temporal_free(f.child)
    if isinstance(f, (And, Or)):
        return is_temporal_free(f.left) and is_temporal_free(f.right)
    return False


def predicate_names(f: Formula) -> set[str]:
    if isinstance(f, (Pred, NegPred)):
        return {f.name}
    if isinstance(f, TrueF):
        return set()
    if isinstance(f, (Not, Always, Eventually)):
        return predicate_names(f.child)
    return predicate_names(f.left) | predicate_names(f.right)


def count_operators(f: Formula) -> tuple[int, int]:
    """(Boolean operators, temporal operators) of a formula."""
    if isinstance(f, (TrueF, Pred, NegPred)):
        return 0, 0
    if isinstance(f, Not):
        return count_operators(f.child)
    if isinstance(f, (Always, Eventually)):
        n, m = count_operators(f.child)
        return n, m + 1
    nl, ml = count_operators(f.left)
    nr, mr = count_operators(f.right)
    if isinstance(f, Until):
        return nl + nr, ml + mr + 1
    return nl + nr + 1, ml + mr


# ---------------------------------------------------------------------------
# horizons


def horizon(f: Formula) -> float:
    """Time horizon in seconds (b plus the deepest child horizon)."""
    if isinstance(f, (TrueF, Pred, NegPred)):
        return 0.0
    if isinstance(f, Not):
        return horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(horizon(f.left), horizon(f.right))
    if isinstance(f, Until):
        _check_bounded(f.interval)
        return f.interval.b + max(horizon(f.left), horizon(f.right))
    if isinstance(f, (Always, Eventually)):
        _check_bounded(f.interval)
        return f.interval.b + horizon(f.child)
    raise TypeError(f"not a formula: {f!r}")


def _check_bounded(iv: Interval):
    if not iv.bounded:
        raise HorizonError(f"unbounded interval {iv} gives an infinite horizon")


def horizon_steps(f: Formula, period: float) -> int:
    if isinstance(f, (TrueF, Pred, NegPred)):
        return 0
    if isinstance(f, Not):
        return horizon_steps(f.child, period)
    if isinstance(f, (And, Or)):
        return max(horizon_steps(f.left, period), horizon_steps(f.right, period))
    if isinstance(f, Until):
        return f.interval.steps(period)[1] + max(horizon_steps(f.left, period), horizon_steps(f.right, period))
    if isinstance(f, (Always, Eventually)):
        return f.interval.steps(period)[1] + horizon_steps(f.child, period)
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# semantics


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    period: float
    start: int = 0

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if arr.shape[0] < 1:
            raise ValueError("a signal needs at least one sample")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def end(self) -> int:
        """Last step index covered."""
        return self.start + len(self) - 1

    def at(self, k: int) -> np.ndarray:
        return self.samples[k - self.start]


class _Truth:
    """Lazily cached predicate truth values along a signal."""

    def __init__(self, signal: Signal, predicates):
        self.signal = signal
        self.predicates = predicates
        self.cache: dict[str, np.ndarray] = {}

    def __call__(self, name: str, k: int) -> bool:
        vals = self.cache.get(name)
        if vals is None:
            try:
                pred = self.predicates[name]
            except KeyError:
                raise UnknownPredicateError(f"unknown predicate {name!r}") from None
            vals = np.asarray(pred.g(self.signal.samples) >= 0)
            self.cache[name] = vals
        return bool(vals[k - self.signal.start])


def evaluate(f: Formula, signal: Signal, k: int = 0, predicates: Mapping[str, PredicateDef] | None = None) -> bool:
    """Boolean satisfaction ``(x, t_k) |= f``."""
    need = k + horizon_steps(f, signal.period)
    if k < signal.start or need > signal.end:
        raise InsufficientSignalError(
            f"signal covers steps {signal.start}..{signal.end}, formula needs {k}..{need}"
        )
    return _eval(f, k, _Truth(signal, predicates or {}), signal.period)


def _eval(f, k, truth, period):
    if isinstance(f, TrueF):
        return True
    if isinstance(f, Pred):
        return truth(f.name, k)
    if isinstance(f, NegPred):
        return not truth(f.name, k)
    if isinstance(f, Not):
        return not _eval(f.child, k, truth, period)
    if isinstance(f, And):
        return _eval(f.left, k, truth, period) and _eval(f.right, k, truth, period)
    if isinstance(f, Or):
        return _eval(f.left, k, truth, period) or _eval(f.right, k, truth, period)
    if isinstance(f, Until):
        lo, hi = f.interval.steps(period)
        for kk in range(k, k + hi + 1):
            if kk >= k + lo and _eval(f.right, kk, truth, period):
                return True
            if not _eval(f.left, kk, truth, period):
                return False
        return False
    if isinstance(f, Always):
        lo, hi = f.interval.steps(period)
        return all(_eval(f.child, kk, truth, period) for kk in range(k + lo, k + hi + 1))
    if isinstance(f, Eventually):
        lo, hi = f.interval.steps(period)
        return any(_eval(f.child, kk, truth, period) for kk in range(k + lo, k + hi + 1))
    raise TypeError(f"not a formula: {f!r}")


def explain(
    f: Formula, signal: Signal, k: int = 0, predicates: Mapping[str, PredicateDef] | None = None
) -> tuple[bool, int]:
    """Verdict plus the step that settles it: the witness step of a satisfied
    Until/Eventually, the first failing step of a violated Always or Until."""
    evaluate(f, signal, k, predicates)  # range checks
    return _explain(f, k, _Truth(signal, predicates or {}), signal.period)


def _explain(f, k, truth, period):
    if isinstance(f, (TrueF, Pred, NegPred)):
        return _eval(f, k, truth, period), k
    if isinstance(f, Not):
        v, s = _explain(f.child, k, truth, period)
        return not v, s
    if isinstance(f, (And, Or)):
        parts = [_explain(c, k, truth, period) for c in (f.left, f.right)]
        want = isinstance(f, Or)  # value that decides early
        hits = [s for v, s in parts if v == want]
        if hits:
            return want, min(hits)
        return not want, max(s for _, s in parts)
    if isinstance(f, Until):
        lo, hi = f.interval.steps(period)
        for kk in range(k, k + hi + 1):
            if kk >= k + lo and _eval(f.right, kk, truth, period):
                return True, kk
            if not _eval(f.left, kk, truth, period):
                return False, kk
        return False, k + hi
    lo, hi = f.interval.steps(period)
    steps = range(k + lo, k + hi + 1)
    if isinstance(f, Always):
        for kk in steps:
            if not _eval(f.child, kk, truth, period):
                return False, kk
        return True, k + hi
    if isinstance(f, Eventually):
        for kk in steps:
            if _eval(f.child, kk, truth, period):
                return True, kk
        return False, k + hi
    raise TypeError(f"not a formula: {f!r}")


def evaluate_realtime(
    f: Formula,
    partial: Signal,
    k: int,
    l: int,
    predicates: Mapping[str, PredicateDef] | None = None,
) -> bool:
    """Real-time satisfaction of a partial signal observed from step ``l``.

    ``partial`` starts at step ``l``; values before ``l`` are unknown and
    atomic checks there are treated as satisfiable.  ``l`` must lie in
    ``[k, k + horizon]``.  With ``l == k`` this coincides with
    :func:`evaluate`.
    """
    g = desugar(to_pnf(f))
    period = partial.period
    h = horizon_steps(g, period)
    if not (k <= l <= k + h):
        raise DomainError(f"observation start {l} outside window [{k}, {k + h}]")
    if partial.start != l:
        raise DomainError(f"partial signal starts at {partial.start}, expected {l}")
    if k + h > partial.end:
        raise InsufficientSignalError(f"partial signal ends at {partial.end}, needs {k + h}")
    return _rt(g, k, l, _Truth(partial, predicates or {}), period)


def _rt(f, k, l, truth, period):
    if isinstance(f, TrueF):
        return True
    if isinstance(f, Pred):
        return True if k < l else truth(f.name, k)
    if isinstance(f, NegPred):
        return True if k < l else not truth(f.name, k)
    if isinstance(f, And):
        return _rt(f.left, k, l, truth, period) and _rt(f.right, k, l, truth, period)
    if isinstance(f, Or):
        return _rt(f.left, k, l, truth, period) or _rt(f.right, k, l, truth, period)
    if isinstance(f, Until):
        lo, hi = f.interval.steps(period)
        first = max(k + lo, l) if is_temporal_free(f.right) else k + lo
        for kp in range(first, k + hi + 1):
            if not _rt(f.right, kp, l, truth, period):
                continue
            # obligation on [max(k, l), k'): nested operands start at their own k
            if l > kp or all(_rt(f.left, kk, l, truth, period) for kk in range(max(k, l), kp)):
                return True
        return False
    if isinstance(f, Always):
        lo, hi = f.interval.steps(period)
        first = max(k + lo, l) if is_temporal_free(f.child) else k + lo
        return all(_rt(f.child, kp, l, truth, period) for kp in range(first, k + hi + 1))
    raise TypeError(f"not a PNF formula: {f!r}")


# ---------------------------------------------------------------------------
# printing


def to_sexpr(f: Formula) -> str:
    """Canonical S-expression text, stable across runs."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, Pred):
        return f.name
    if isinstance(f, NegPred):
        return f"(not {f.name})"
    if isinstance(f, Not):
        return f"(not {to_sexpr(f.child)})"
    if isinstance(f, And):
        return f"(and {to_sexpr(f.left)} {to_sexpr(f.right)})"
    if isinstance(f, Or):
        return f"(or {to_sexpr(f.left)} {to_sexpr(f.right)})"
    if isinstance(f, Until):
        return f"(until {f.interval} {to_sexpr(f.left)} {to_sexpr(f.right)})"
    if isinstance(f, Always):
        return f"(always {f.interval} {to_sexpr(f.child)})"
    if isinstance(f, Eventually):
        return f"(eventually {f.interval} {to_sexpr(f.child)})"
    raise TypeError(f"not a formula: {f!r}")


def to_text(f: Formula) -> str:
    """Fully parenthesized infix text that :func:`parse` reads back."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, Pred):
        return f.name
    if isinstance(f, NegPred):
        return f"!{f.name}"
    if isinstance(f, Not):
        return f"!({to_text(f.child)})"
    if isinstance(f, And):
        return f"({to_text(f.left)} & {to_text(f.right)})"
    if isinstance(f, Or):
        return f"({to_text(f.left)} | {to_text(f.right)})"
    if isinstance(f, Until):
        return f"({to_text(f.left)} U{f.interval} {to_text(f.right)})"
    if isinstance(f, Always):
        return f"G{f.interval} ({to_text(f.child)})"
    if isinstance(f, Eventually):
        return f"F{f.interval} ({to_text(f.child)})"
    raise TypeError(f"not a formula: {f!r}")
