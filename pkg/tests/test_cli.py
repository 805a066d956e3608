from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from helpers import path_graph, star_graph
from mpprune.cli import main
from mpprune.graph import dump


def run_cli(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def pairs(out: str) -> dict:
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line and " " not in line.split("=", 1)[0])


@pytest.fixture
def star(tmp_path):
    p = tmp_path / "star.txt"
    p.write_text(dump(star_graph(5)))
    return str(p)


def test_gen_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert run_cli(capsys, "gen", "--n", "60", "--grid", "60", "--seed", "3", "--out", str(a))[0] == 0
    assert run_cli(capsys, "gen", "--n", "60", "--grid", "60", "--seed", "3", "--out", str(b))[0] == 0
    assert a.read_text() == b.read_text()


def test_gen_uses_out_dir_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MPPRUNE_OUT_DIR", str(tmp_path))
    code, out, _ = run_cli(capsys, "gen", "--n", "40", "--grid", "45", "--seed", "1")
    assert code == 0
    assert (tmp_path / "geo-n40-s1.txt").exists()
    assert pairs(out)["n"] == "40"


def test_gen_over_capacity_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "gen", "--n", "70000")
    assert code == 2 and "capacity" in err


def test_gen_failure_exits_one(capsys, tmp_path):
    code, _, err = run_cli(capsys, "gen", "--n", "50", "--max-attempts", "2", "--out", str(tmp_path / "x.txt"))
    assert code == 1 and "error:" in err


def test_missing_graph_exits_one(capsys, tmp_path):
    code, _, err = run_cli(capsys, "run", "--graph", str(tmp_path / "none.txt"))
    assert code == 1 and "error:" in err


def test_bad_flag_exits_two(capsys, star):
    assert run_cli(capsys, "run", "--graph", star, "--m", "0")[0] == 2
    assert run_cli(capsys, "run", "--graph", star, "--loss", "1.5")[0] == 2


def test_run_enhanced_star_leaves_silent(capsys, star):
    code, out, _ = run_cli(capsys, "run", "--graph", star, "--variant", "enhanced", "--m", "10")
    assert code == 0
    kv = pairs(out)
    assert kv["leaf_packets_sent"] == "0" and kv["leader"] == "0"
    assert not out.splitlines()[-1].count("=")


def test_run_json_detail(capsys, star, tmp_path):
    target = tmp_path / "d.json"
    code, _, _ = run_cli(capsys, "run", "--graph", star, "--json", str(target))
    assert code == 0
    assert json.loads(target.read_text())["estimates"][0] == "5/6"


def test_compare_fields(capsys, star):
    code, out, _ = run_cli(capsys, "compare", "--graph", star, "--m", "10")
    kv = pairs(out)
    assert code == 0
    assert kv["leaders_equal"] == "1" and kv["non_leaf_estimates_equal"] == "1"
    assert float(kv["avg_msgs_I"]) < float(kv["avg_msgs_P"])
    assert float(kv["reduction_pct"]) > 0


@pytest.mark.parametrize("cmd", ["run", "compare"])
def test_repeat_is_identical_modulo_wall(capsys, star, cmd):
    argv = [cmd, "--graph", star, "--m", "10", "--loss", "0.2", "--seed", "4"]
    a = [l for l in run_cli(capsys, *argv)[1].splitlines() if not l.startswith("wall_s")]
    b = [l for l in run_cli(capsys, *argv)[1].splitlines() if not l.startswith("wall_s")]
    assert a == b


def test_quality(capsys, tmp_path):
    p = tmp_path / "p7.txt"
    p.write_text(dump(path_graph(7)))
    code, out, _ = run_cli(capsys, "quality", "--graph", str(p), "--D-list", "2", "6", "--out", str(tmp_path / "q.csv"))
    assert code == 0
    assert "exact_leader=3" in out
    with open(tmp_path / "q.csv") as fh:
        assert [r["D"] for r in csv.DictReader(fh)] == ["2", "6"]


def write_plan(tmp_path, extra=""):
    (tmp_path / "p5.txt").write_text(dump(path_graph(5)))
    (tmp_path / "star.txt").write_text(dump(star_graph(4)))
    plan = tmp_path / "plan.ini"
    plan.write_text("[plan]\nm = 1, 10\nD = 12\n" + extra
                    + "[graph:p5]\npath = p5.txt\n[graph:star]\npath = star.txt\n")
    return plan


def test_sweep_then_resume(capsys, tmp_path):
    plan = write_plan(tmp_path)
    out = tmp_path / "res.csv"
    code, text, _ = run_cli(capsys, "sweep", "--plan", str(plan), "--out", str(out))
    assert code == 0 and pairs(text)["executed"] == "8"
    code, text, _ = run_cli(capsys, "sweep", "--plan", str(plan), "--out", str(out))
    assert code == 0 and pairs(text)["skipped"] == "8" and pairs(text)["executed"] == "0"


def test_sweep_missing_plan(capsys, tmp_path):
    assert run_cli(capsys, "sweep", "--plan", str(tmp_path / "none.ini"))[0] == 1


def test_sweep_with_missing_graph_exits_one(capsys, tmp_path):
    plan = write_plan(tmp_path, "[graph:ghost]\npath = ghost.txt\n")
    code, text, _ = run_cli(capsys, "sweep", "--plan", str(plan), "--out", str(tmp_path / "r.csv"))
    assert code == 1 and "source_error[ghost]" in text


def test_stats_all_zero_differences_exits_one(capsys, tmp_path):
    # a triangle has no leaves: both variants behave identically
    tri = tmp_path / "tri.txt"
    tri.write_text("0 1\n1 2\n2 0\n")
    plan = tmp_path / "plan.ini"
    plan.write_text("[plan]\nm = 1\n[graph:tri]\npath = tri.txt\n")
    out = tmp_path / "res.csv"
    assert run_cli(capsys, "sweep", "--plan", str(plan), "--out", str(out))[0] == 0
    code, text, err = run_cli(capsys, "stats", "--results", str(out))
    assert code == 1 and "insufficient" in err
    assert "p=nan" in text


def test_stats_reports_every_metric(capsys, tmp_path):
    rows = []
    header = "graph_id,n,edges,diameter,variant,m,D,loss_p,seed,avg_msgs,max_msgs,ticks,wall_s," \
             "mem_proxy,loss_frac,leader,leader_dist_exact,errors"
    for k in range(8):
        for v, val in (("original", 10 + k), ("enhanced", 9)):
            rows.append(f"g{k},10,9,3,{v},1,12,0.0,0,{val},{val},5,0.1,100,0.0,0,0,")
    res = tmp_path / "r.csv"
    res.write_text(header + "\n" + "\n".join(rows) + "\n")
    code, text, _ = run_cli(capsys, "stats", "--results", str(res))
    assert code == 0
    lines = [l for l in text.splitlines() if l.startswith("metric=")]
    assert [l.split()[0] for l in lines] == [f"metric={m}" for m in
                                              ("avg_msgs", "max_msgs", "ticks", "mem_proxy", "loss_frac")]
    assert "significant=1" in lines[0] and "p=nan" in lines[2]


def test_plotdata_boxplot_columns(capsys, tmp_path, star):
    code, _, _ = run_cli(capsys, "plotdata", "--graph", star, "--out-dir", str(tmp_path))
    assert code == 0
    with open(tmp_path / "boxplot_D12_m1.csv") as fh:
        reader = csv.reader(fh)
        assert next(reader) == ["node", "P", "I"]
        assert len(list(reader)) == 6


def test_plotdata_needs_input(capsys):
    assert run_cli(capsys, "plotdata")[0] == 1


def test_module_entry_point(star):
    proc = subprocess.run([sys.executable, "-m", "mpprune", "run", "--graph", star],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "avg_msgs=" in proc.stdout
