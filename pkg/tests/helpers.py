"""Shared generators and brute-force oracles for the test suite."""

import itertools

import numpy as np

from tubetlt import formula as F
from tubetlt.predicates import halfspace

# 1-D predicates over scalar signals: x >= c
THRESH = {"p": 0.0, "q": 1.0, "r": -1.0}
PREDS_1D = {n: halfspace(n, [1.0], -c) for n, c in THRESH.items()}


def random_interval(rng, max_b=3):
    a = int(rng.integers(0, max_b + 1))
    b = int(rng.integers(a, max_b + 1))
    return F.Interval(float(a), float(b))


def random_formula(rng, depth=3, names=("p", "q", "r"), negate_until=False, eventually=True, max_b=3):
    """Random formula; Not never sits above an Until unless ``negate_until``."""

    def gen(d, allow_until=True):
        if d == 0 or rng.random() < 0.25:
            return F.Pred(str(rng.choice(names)))
        kinds = ["not", "and", "or", "always"]
        if allow_until:
            kinds.append("until")
        if eventually:
            kinds.append("eventually")
        k = kinds[int(rng.integers(len(kinds)))]
        if k == "not":
            return F.Not(gen(d - 1, negate_until))
        if k == "and":
            return F.And(gen(d - 1, allow_until), gen(d - 1, allow_until))
        if k == "or":
            return F.Or(gen(d - 1, allow_until), gen(d - 1, allow_until))
        if k == "always":
            return F.Always(gen(d - 1, allow_until), random_interval(rng, max_b))
        if k == "eventually":
            return F.Eventually(gen(d - 1, allow_until), random_interval(rng, max_b))
        return F.Until(gen(d - 1, allow_until), gen(d - 1, allow_until), random_interval(rng, max_b))

    return gen(depth)


def random_signal(rng, length, lo=-2.0, hi=2.0):
    return F.Signal(rng.uniform(lo, hi, size=(length, 1)), 1.0)


def oracle_sat(f, xs, period=1.0):
    """Truth of ``f`` at every step as a bool vector, computed bottom-up over
    index sets; positions whose window runs off the end read False."""
    n = len(xs)
    if isinstance(f, F.TrueF):
        return np.ones(n, dtype=bool)
    if isinstance(f, F.Pred):
        return PREDS_1D[f.name].g(xs) >= 0
    if isinstance(f, F.NegPred):
        return ~(PREDS_1D[f.name].g(xs) >= 0)
    if isinstance(f, F.Not):
        return ~oracle_sat(f.child, xs, period)
    if isinstance(f, F.And):
        return oracle_sat(f.left, xs, period) & oracle_sat(f.right, xs, period)
    if isinstance(f, F.Or):
        return oracle_sat(f.left, xs, period) | oracle_sat(f.right, xs, period)
    lo, hi = f.interval.steps(period)
    out = np.zeros(n, dtype=bool)
    if isinstance(f, F.Always):
        c = oracle_sat(f.child, xs, period)
        for k in range(n):
            if k + hi < n:
                out[k] = c[k + lo : k + hi + 1].all()
        return out
    if isinstance(f, F.Eventually):
        c = oracle_sat(f.child, xs, period)
        for k in range(n):
            if k + hi < n:
                out[k] = c[k + lo : k + hi + 1].any()
        return out
    left = oracle_sat(f.left, xs, period)
    right = oracle_sat(f.right, xs, period)
    for k in range(n):
        if k + hi >= n:
            continue
        # some witness k' in the window with the left operand on [k, k')
        out[k] = any(right[kp] and left[k:kp].all() for kp in range(k + lo, k + hi + 1))
    return out


def enumerate_signals(values, length):
    for combo in itertools.product(values, repeat=length):
        yield F.Signal(np.array(combo, dtype=float).reshape(-1, 1), 1.0)


# -- reachability games on lattices ------------------------------------------


def lattice_instance(rng, max_cells=25, horizon=6):
    """Random unit lattice (1-D or 2-D, at most ``max_cells`` cells), integer
    integrator samples, target/constraint masks and a step window."""
    from tubetlt.gridset import Grid
    from tubetlt.system import integrator_model

    if rng.random() < 0.5:
        n = int(rng.integers(3, max_cells + 1))
        grid = Grid([-0.5], [n - 0.5], [n])
        moves = [(-1,), (0,), (1,), (2,)]
        shocks = [(-1,), (0,), (1,)]
    else:
        nx = int(rng.integers(2, min(5, max_cells // 2) + 1))
        ny = int(rng.integers(2, max_cells // nx + 1))
        grid = Grid([-0.5, -0.5], [nx - 0.5, ny - 0.5], [nx, ny])
        moves = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]
        shocks = [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)]
    us = np.array([moves[i] for i in rng.choice(len(moves), int(rng.integers(1, 4)), replace=False)], float)
    ws = np.array([shocks[i] for i in rng.choice(len(shocks), int(rng.integers(1, 3)), replace=False)], float)
    model = integrator_model(us, ws)
    tgt = rng.random(grid.size) < rng.uniform(0.05, 0.5)
    con = rng.random(grid.size) < rng.uniform(0.4, 1.0)
    a = int(rng.integers(0, horizon + 1))
    b = int(rng.integers(a, horizon + 1))
    return grid, model, tgt, con, a, b


def successors(grid, model):
    """succ[c][i] = list over disturbances of the successor cell (None = exit)."""
    out = []
    for c in range(grid.size):
        x = grid.centers[c]
        row = []
        for u in model.controls:
            nxt = []
            for w in model.disturbances:
                j = int(grid.cell_index(x + u + w))
                nxt.append(None if j < 0 else j)
            row.append(nxt)
        out.append(row)
    return out


def game_oracle(grid, model, tgt, con, a, b, kind="max"):
    """Slices of the reach tube from the game quantifiers, one state at a time.

    ``max``: some policy, against every disturbance sequence, hits ``tgt`` at
    a step in ``[max(a, k), b]`` with ``con`` holding at every earlier step.
    ``min``: every policy admits a disturbance sequence hitting ``tgt`` in the
    window.  Feedback on (step, cell) suffices for such finite games, so the
    memoized minimax over (step, cell) decides the policy quantifier.
    """
    succ = successors(grid, model)
    memo = {}

    def win(t, c):
        if (t, c) in memo:
            return memo[(t, c)]
        if t >= a and tgt[c]:
            r = True
        elif t == b:
            r = False
        elif kind == "max":
            r = bool(con[c]) and any(
                all(j is not None and win(t + 1, j) for j in row) for row in succ[c]
            )
        else:
            r = all(any(j is not None and win(t + 1, j) for j in row) for row in succ[c])
        memo[(t, c)] = r
        return r

    return [np.array([win(t, c) for c in range(grid.size)]) for t in range(b + 1)]


def policy_enumeration(grid, model, tgt, con, a, b, k, c0, kind="max"):
    """Literal enumeration of every feedback map on the (step, cell) pairs
    reachable from ``c0`` at step ``k``; for each map every disturbance
    sequence is simulated."""
    succ = successors(grid, model)
    nu, nw = model.n_controls, model.disturbances.shape[0]
    points = []
    frontier = {c0}
    for t in range(k, b):
        points += [(t, c) for c in sorted(frontier)]
        frontier = {j for c in frontier for row in succ[c] for j in row if j is not None}
    index = {p: i for i, p in enumerate(points)}

    def outcome(policy, ws):
        c = c0
        for n, t in enumerate(range(k, b + 1)):
            if t >= a and tgt[c]:
                return True
            if t == b or (kind == "max" and not con[c]):
                return False
            c = succ[c][policy[index[(t, c)]]][ws[n]]
            if c is None:
                return False
        return False

    seqs = list(itertools.product(range(nw), repeat=max(b - k, 0)))
    results = (
        [outcome(p, ws) for ws in seqs] for p in itertools.product(range(nu), repeat=len(points))
    )
    if kind == "max":
        return any(all(r) for r in results)
    return all(any(r) for r in results)


# -- exhaustive satisfiability on deterministic lattices --------------------


def batch_sat(f, X):
    """Truth at every step for a batch of scalar signals ``X`` (N, L);
    windows running off the end read False."""
    N, L = X.shape
    if isinstance(f, F.TrueF):
        return np.ones((N, L), dtype=bool)
    if isinstance(f, F.Pred):
        return X >= THRESH[f.name]
    if isinstance(f, F.NegPred):
        return X < THRESH[f.name]
    if isinstance(f, F.Not):
        return ~batch_sat(f.child, X)
    if isinstance(f, F.And):
        return batch_sat(f.left, X) & batch_sat(f.right, X)
    if isinstance(f, F.Or):
        return batch_sat(f.left, X) | batch_sat(f.right, X)
    lo, hi = f.interval.steps(1.0)
    out = np.zeros((N, L), dtype=bool)
    if isinstance(f, (F.Always, F.Eventually)):
        c = batch_sat(f.child, X)
        for k in range(L - hi):
            w = c[:, k + lo : k + hi + 1]
            out[:, k] = w.all(axis=1) if isinstance(f, F.Always) else w.any(axis=1)
        return out
    left = batch_sat(f.left, X)
    right = batch_sat(f.right, X)
    for k in range(L - hi):
        acc = np.zeros(N, dtype=bool)
        for kp in range(k + lo, k + hi + 1):
            acc |= right[:, kp] & left[:, k:kp].all(axis=1)
        out[:, k] = acc
    return out


def lattice_runs(x0, moves, steps, lo, hi):
    """Every state sequence of ``x+ = x + u`` from ``x0`` over ``steps`` steps
    that stays inside the lattice ``[lo, hi]`` (shape (N, steps + 1))."""
    seqs = np.array(list(itertools.product(moves, repeat=steps)), dtype=float).reshape(-1, max(steps, 1))[:, :steps]
    X = x0 + np.concatenate([np.zeros((len(seqs), 1)), np.cumsum(seqs, axis=1)], axis=1)
    keep = np.all((X >= lo) & (X <= hi), axis=1)
    return X[keep]
