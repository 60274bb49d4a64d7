import csv
import io
import json
import os

import numpy as np
import pytest

from tubetlt import cli
from tubetlt import config as C
from tubetlt.ttlt import construct
from tubetlt.synth import run_online
from tubetlt.system import DisturbanceSource

from test_config import BASE


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(BASE + f"\n[disturbance]\nmode = uniform\nseed = 3\nrealizations = 3\n\n[output]\ndirectory = {tmp_path / 'out'}\n")
    return str(p), tmp_path / "out"


def test_check_passes_and_writes_report(scenario, capsys):
    path, out = scenario
    assert cli.main(["check", "--config", path]) == 0
    rep = json.loads((out / "check.json").read_text())
    main = rep["branches"]["main"]
    assert main["root_contains_x0"] and main["verdict"] == "pass"
    assert main["probe"]["monitor"] is True
    assert "main: pass" in capsys.readouterr().out


def test_check_fails_outside_root(scenario):
    path, out = scenario
    text = open(path).read().replace("x0 = 0.5 0.5", "x0 = -3.5 3.5")
    open(path, "w").write(text)
    assert cli.main(["check", "--config", path]) == 1
    rep = json.loads((out / "check.json").read_text())["branches"]["main"]
    assert rep["strength"] == "necessary" and not rep["root_contains_x0"]


def test_synthesize_is_reproducible(scenario, tmp_path):
    path, _ = scenario
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert cli.main(["synthesize", "--config", path, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["realizations"] == 3 and summary["satisfied"] == 3
        runs.append([(out / f"traj_{i:03d}.csv").read_text() for i in range(3)])
    assert runs[0] == runs[1]
    rows = list(csv.DictReader(open(tmp_path / "a" / "traj_000.csv")))
    assert list(rows[0])[:4] == ["k", "t", "x1", "x2"]
    assert rows[0]["x1"] == "0.5"


def test_synthesize_refuses_failed_check(scenario):
    path, _ = scenario
    open(path, "w").write(open(path).read().replace("x0 = 0.5 0.5", "x0 = -3.5 3.5"))
    assert cli.main(["synthesize", "--config", path]) == 2


def test_monitor_round_trip(scenario, tmp_path):
    path, _ = scenario
    out = tmp_path / "m"
    cli.main(["synthesize", "--config", path, "--out", str(out), "--realizations", "1"])
    traj = str(out / "traj_000.csv")
    assert cli.main(["monitor", "--config", path, "--formula", "main", "--trajectory", traj]) == 0
    assert cli.main(["monitor", "--config", path, "--formula", "G[0,3] b", "--trajectory", traj]) == 1


def test_csv_round_trip_keeps_floats():
    cfg = C.loads(BASE)
    t = construct(cfg.parsed(), cfg.model, cfg.grid, cfg.predicates)
    res = run_online(t, cfg.x0, DisturbanceSource(cfg.model, "uniform", seed=1), extend=True)
    text = cli.trajectory_csv(res)
    xs = np.array([[float(r["x1"]), float(r["x2"])] for r in csv.DictReader(io.StringIO(text))])
    assert np.array_equal(xs, res.states)


def test_export_tree(scenario, tmp_path):
    path, _ = scenario
    out = tmp_path / "e"
    assert cli.main(["export-tree", "--config", path, "--out", str(out)]) == 0
    data = json.loads((out / "tree_main.json").read_text())
    assert data["nodes"][0]["id"] == 0
    assert os.path.exists(out / "tree_main" / "node_00" / "slice_0000.csv")


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text(BASE.replace("kind = integrator", "kind = nope"))
    assert cli.main(["check", "--config", str(p)]) == 2
