"""Command-line front end: check | synthesize | monitor | export-tree."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
import multiprocessing as mp

import numpy as np

from . import config as C
from . import formula as F
from .errors import TubeTLTError
from .reach import TubeCache
from .system import DisturbanceSource
from .synth import RunResult, run_online
from .ttlt import Ttlt, construct, export_tree, in_sound_fragment


def _info(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _dump(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- shared helpers ---------------------------------------------------------


def _load(args) -> C.ScenarioConfig:
    cfg = C.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "realizations", None) is not None:
        cfg.realizations = args.realizations
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _selected(cfg: C.ScenarioConfig, name: str | None) -> str:
    return name or cfg.synthesize or "main"


def _build(cfg: C.ScenarioConfig, name: str, cache: TubeCache) -> tuple[Ttlt, float]:
    t0 = time.perf_counter()
    tree = construct(cfg.parsed(name), cfg.model, cfg.grid, cfg.predicates, cache, raster=cfg.raster)
    return tree, time.perf_counter() - t0


def _deterministic(cfg: C.ScenarioConfig) -> bool:
    return bool(np.all(cfg.model.disturbances == 0))


def _monitor(tree: Ttlt, cfg: C.ScenarioConfig, res: RunResult):
    """(satisfied, deciding step) or (None, None) when the trace is too short."""
    try:
        return F.explain(tree.formula, res.signal, 0, cfg.predicates)
    except TubeTLTError:
        return None, None


def check_tree(tree: Ttlt, cfg: C.ScenarioConfig) -> dict:
    """Root membership of ``x0`` plus a zero-disturbance dry run."""
    x0 = cfg.x0
    root = bool(tree.nodes[tree.root].tube.at(0).contains(x0))
    fragment = in_sound_fragment(tree.structure)
    report = {
        "root_contains_x0": root,
        "in_sound_fragment": fragment,
        "abstraction": cfg.model.abstraction,
        "raster": cfg.raster,
    }
    if not root:
        report.update(
            verdict="fail",
            strength="necessary",
            reason="initial state outside the root set at step 0; no control policy can "
            "robustly satisfy the formula",
        )
        return report
    res = run_online(tree, x0, DisturbanceSource(cfg.model, "zero"), slack=cfg.slack, extend=True)
    ok, step = _monitor(tree, cfg, res)
    report["probe"] = {
        "verdict": res.verdict,
        "steps": len(res.states) - 1,
        "nexis_step": res.nexis_step,
        "monitor": ok,
        "deciding_step": step,
    }
    if res.verdict != "completed" or not ok:
        report.update(verdict="fail", strength="probe", reason="dry run without disturbance did not satisfy")
        return report
    # pointwise soundness needs whole-cell reasoning in both dynamics and leaves
    sound = fragment and cfg.raster == "inner" and (cfg.model.abstraction == "cover" or _deterministic(cfg))
    report.update(
        verdict="pass",
        strength="sound" if sound else "necessary+probe",
        reason="root contains the initial state and the dry run satisfies the formula",
    )
    return report


# -- trajectory files -------------------------------------------------------


def trajectory_csv(res: RunResult) -> str:
    n = res.states.shape[1]
    m = res.controls.shape[1]
    nw = res.disturbances.shape[1]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(
        ["k", "t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"w{i + 1}" for i in range(nw)]
        + ["feasible_count"]
    )
    steps = len(res.states)
    for k in range(steps):
        row = [str(k), _fmt(k * res.period)] + [_fmt(v) for v in res.states[k]]
        if k < len(res.controls):
            row += [_fmt(v) for v in res.controls[k]] + [_fmt(v) for v in res.disturbances[k]]
        else:
            row += [""] * (m + nw)
        fc = res.feasible_counts[k] if k < len(res.feasible_counts) else None
        row.append("" if fc is None else str(fc))
        w.writerow(row)
    return out.getvalue()


def read_trajectory(path: str) -> tuple[np.ndarray, float | None]:
    """States (rows ``x1..xn``) and the sampling period implied by ``t``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise TubeTLTError(f"empty trajectory file {path!r}")
    cols = sorted((c for c in rows[0] if c and c[0] == "x" and c[1:].isdigit()), key=lambda c: int(c[1:]))
    if not cols:
        raise TubeTLTError(f"no state columns x1..xn in {path!r}")
    xs = np.array([[float(r[c]) for c in cols] for r in rows])
    period = None
    if "t" in rows[0] and len(rows) > 1:
        period = float(rows[1]["t"]) - float(rows[0]["t"])
    return xs, period


# -- synthesis workers ------------------------------------------------------

_JOB: dict = {}


def _realization(i: int) -> dict:
    tree, cfg, out_dir = _JOB["tree"], _JOB["cfg"], _JOB["out"]
    seed = cfg.seed + i
    src = DisturbanceSource(cfg.model, cfg.disturbance_mode, seed=seed, replay=cfg.replay)
    t0 = time.perf_counter()
    res = run_online(tree, cfg.x0, src, slack=cfg.slack, extend=True)
    elapsed = time.perf_counter() - t0
    ok, step = _monitor(tree, cfg, res)
    counts = [c for c in res.feasible_counts if c is not None]
    record = {
        "realization": i,
        "seed": seed,
        "verdict": res.verdict,
        "tree_certified": bool(res.satisfied),
        "satisfied": bool(ok) if ok is not None else None,
        "deciding_step": step,
        "steps": len(res.states) - 1,
        "nexis_step": res.nexis_step,
        "nexis_nodes": res.nexis_nodes,
        "feasible_count": {
            "min": min(counts) if counts else None,
            "mean": round(float(np.mean(counts)), 6) if counts else None,
            "max": max(counts) if counts else None,
        },
    }
    with open(os.path.join(out_dir, f"traj_{i:03d}.csv"), "w") as fh:
        fh.write(trajectory_csv(res))
    _dump(os.path.join(out_dir, f"run_{i:03d}.json"), record)
    steps = max(1, len(res.states) - 1)
    return {"record": record, "seconds": elapsed, "per_step": elapsed / steps}


# -- commands ---------------------------------------------------------------


def cmd_check(args) -> int:
    cfg = _load(args)
    names = [args.formula] if args.formula else (list(cfg.branches) or ["main"])
    cache = TubeCache()
    report = {"scenario": cfg.name, "x0": cfg.x0.tolist(), "grid": _grid_info(cfg), "branches": {}}
    timing = {}
    for name in names:
        tree, secs = _build(cfg, name, cache)
        entry = {"formula": cfg.formulas()[name]}
        entry.update(check_tree(tree, cfg))
        report["branches"][name] = entry
        timing[name] = secs
        print(f"{name}: {entry['verdict']} ({entry['strength']}) root={entry['root_contains_x0']} build={secs:.1f}s")
    os.makedirs(cfg.out_dir, exist_ok=True)
    _dump(os.path.join(cfg.out_dir, "check.json"), report)
    _dump(os.path.join(cfg.out_dir, "check_timing.json"), {"build_seconds": timing})
    target = _selected(cfg, args.formula)
    chosen = report["branches"].get(target)
    if chosen is None:
        return 0 if any(b["verdict"] == "pass" for b in report["branches"].values()) else 1
    return 0 if chosen["verdict"] == "pass" else 1


def _grid_info(cfg) -> dict:
    g = cfg.grid
    return {"lower": list(g.lower), "upper": list(g.upper), "counts": list(g.counts), "widths": list(g.widths)}


def cmd_synthesize(args) -> int:
    cfg = _load(args)
    name = _selected(cfg, args.formula)
    tree, build = _build(cfg, name, TubeCache())
    pre = check_tree(tree, cfg)
    if pre["verdict"] != "pass" and not args.force:
        _info(f"check failed for {name!r}: {pre['reason']} (use --force to run anyway)")
        return 2
    os.makedirs(cfg.out_dir, exist_ok=True)
    _JOB.update(tree=tree, cfg=cfg, out=cfg.out_dir)
    idx = list(range(cfg.realizations))
    if args.jobs > 1 and len(idx) > 1:
        with ProcessPoolExecutor(args.jobs, mp_context=mp.get_context("fork")) as ex:
            results = list(ex.map(_realization, idx))
    else:
        results = [_realization(i) for i in idx]
    records = [r["record"] for r in results]
    sat = sum(1 for r in records if r["satisfied"])
    counts = [r["feasible_count"] for r in records if r["feasible_count"]["min"] is not None]
    summary = {
        "scenario": cfg.name,
        "formula": cfg.formulas()[name],
        "branch": name,
        "check": pre,
        "grid": _grid_info(cfg),
        "realizations": len(records),
        "completed": sum(1 for r in records if r["verdict"] == "completed"),
        "nexis": sum(1 for r in records if r["verdict"] == "NExis"),
        "satisfied": sat,
        "satisfaction_rate": sat / len(records) if records else None,
        "feasible_count": {
            "min": min(c["min"] for c in counts) if counts else None,
            "mean": round(float(np.mean([c["mean"] for c in counts])), 6) if counts else None,
            "max": max(c["max"] for c in counts) if counts else None,
        },
    }
    _dump(os.path.join(cfg.out_dir, "summary.json"), summary)
    _dump(
        os.path.join(cfg.out_dir, "timing.json"),
        {
            "build_seconds": build,
            "run_seconds": [r["seconds"] for r in results],
            "max_seconds_per_step": max((r["per_step"] for r in results), default=None),
        },
    )
    print(f"{name}: {sat}/{len(records)} satisfied, {summary['nexis']} NExis -> {cfg.out_dir}")
    return 0 if sat == len(records) else 1


def cmd_monitor(args) -> int:
    if args.config:
        cfg = C.load(args.config)
        preds = cfg.predicates
        text = cfg.formulas().get(args.formula, args.formula)
        period = cfg.model.period
    else:
        preds, text, period = {}, args.formula, None
    f = F.parse(text, preds)
    xs, csv_period = read_trajectory(args.trajectory)
    period = args.period or period or csv_period or 1.0
    ok, step = F.explain(f, F.Signal(xs, period), 0, preds)
    print(json.dumps({"formula": text, "satisfied": ok, "deciding_step": step, "steps": len(xs) - 1}))
    return 0 if ok else 1


def cmd_export_tree(args) -> int:
    cfg = _load(args)
    names = [args.formula] if args.formula else ["main"]
    cache = TubeCache()
    os.makedirs(cfg.out_dir, exist_ok=True)
    for name in names:
        tree, _ = _build(cfg, name, cache)
        data = export_tree(tree)
        _dump(os.path.join(cfg.out_dir, f"tree_{name}.json"), data)
        if args.slices != "none":
            for n in tree.tube_nodes():
                d = os.path.join(cfg.out_dir, f"tree_{name}", f"node_{n.id:02d}")
                if args.slices == "all":
                    n.tube.export(d)
                else:
                    os.makedirs(d, exist_ok=True)
                    with open(os.path.join(d, "slice_0000.csv"), "w") as fh:
                        fh.write(n.tube.at(0).to_csv())
                    _dump(os.path.join(d, "manifest.json"), n.tube.manifest())
        print(f"{name}: {len(tree.tube_nodes())} tube nodes, {len(tree.op_nodes())} operator nodes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubetlt", description="STL robust satisfiability and online synthesis")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="scenario INI file")
        sp.add_argument("--formula", help="branch name (default: scenario choice or main)")

    sp = sub.add_parser("check", help="robust satisfiability check")
    common(sp)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("synthesize", help="run online synthesis over seeded realizations")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--realizations", type=int)
    sp.add_argument("--out")
    sp.add_argument("--force", action="store_true", help="run even if the check fails")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("monitor", help="evaluate a formula on a trajectory CSV")
    sp.add_argument("--config", help="scenario INI file (predicates, period)")
    sp.add_argument("--formula", required=True, help="formula text or branch name")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--period", type=float)
    sp.set_defaults(func=cmd_monitor)

    sp = sub.add_parser("export-tree", help="write the tree and its tube slices")
    common(sp)
    sp.add_argument("--out")
    sp.add_argument("--slices", choices=("first", "all", "none"), default="first")
    sp.set_defaults(func=cmd_export_tree)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TubeTLTError as e:
        _info(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
