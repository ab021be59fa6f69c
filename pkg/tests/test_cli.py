import csv
import json

from twophase_tdma.cli import main
from twophase_tdma.oracle import Schedule


def test_topology_and_phases(tmp_path, capsys):
    topo = tmp_path / "t.json"
    assert main(["topo", "gen", "--n", "25", "--range", "60", "--seed", "1", "--out", str(topo)]) == 0
    assert json.loads(topo.read_text())["n"] == 25

    sched = tmp_path / "p1.csv"
    trace = tmp_path / "trace.txt"
    assert main(["phase1", "run", "--topology-file", str(topo), "--trace", str(trace), "--schedule-out", str(sched)]) == 0
    assert "conflicts=0" in capsys.readouterr().out
    assert trace.read_text().strip()

    final = tmp_path / "p2.csv"
    traj = tmp_path / "traj.csv"
    args = ["phase2", "run", "--topology-file", str(topo), "--schedule-in", str(sched)]
    assert main(args + ["--phase2-rounds", "5", "--emit-trajectory", str(traj), "--schedule-out", str(final)]) == 0
    lines = traj.read_text().splitlines()
    assert lines[0] == "round,schedule_length,moves_this_round" and len(lines) == 7
    assert Schedule.load(final).length <= Schedule.load(sched).length

    assert main(["verify", "--topology-file", str(topo), "--schedule-in", str(final)]) == 0
    Schedule.of([1] * 25).save(tmp_path / "bad.csv")
    assert main(["verify", "--topology-file", str(topo), "--schedule-in", str(tmp_path / "bad.csv")]) == 1


def test_pipeline_and_sweep(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["pipeline", "run", "--n", "20", "--density", "8", "--seeds", "0", "1", "--fixed-point", "--out", str(out)]) == 0
    got = list(csv.DictReader(out.open()))
    assert [r["seed"] for r in got] == ["0", "1"]

    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"cells": [
        {"n": 15, "range": 60.0, "seeds": [0, 1], "label": "a"},
        {"n": 15, "range": 60.0, "seeds": [0, 1], "mode": "unicast", "label": "b"},
    ]}))
    sw = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(sw)]) == 0
    assert len(list(csv.DictReader(sw.open()))) == 6


def test_analytics_command(tmp_path, capsys):
    out = tmp_path / "a.csv"
    assert main(["analytics", "--S", "4", "16", "--out", str(out), "--bmin", "4"]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert "S=4" in capsys.readouterr().err


def test_config_errors_exit_2(capsys):
    assert main(["phase1", "run", "--n", "10"]) == 2
    assert main(["phase1", "run", "--n", "10", "--range", "80", "--S", "2"]) == 2
    assert "error:" in capsys.readouterr().err
