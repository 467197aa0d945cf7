import json
import os

import pytest

from udyn.cli import main


def run(tmp_path, *argv, name="out.csv"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def test_simulate_byte_identical(tmp_path):
    c1, f1 = run(tmp_path, "simulate", "--n", "1000", "--a", "500", "--b", "500", "--seed", "7", name="a.csv")
    c2, f2 = run(tmp_path, "simulate", "--n", "1000", "--a", "500", "--b", "500", "--seed", "7", name="b.csv")
    assert c1 == c2 == 0
    assert f1.read_bytes() == f2.read_bytes()
    lines = f1.read_text().splitlines()
    meta = json.loads(lines[0][2:])
    assert meta["seed"] == 7 and meta["parameters"]["n"] == 1000
    assert lines[1] == "round,a,b,q,s,region"
    assert b"\r\n" not in f1.read_bytes()


def test_metadata_reproduces_output(tmp_path):
    _, f1 = run(tmp_path, "simulate", "--n", "500", "--seed", "3", name="a.csv")
    meta = json.loads(f1.read_text().splitlines()[0][2:])
    p = meta["parameters"]
    argv = ["simulate", "--seed", str(meta["seed"]), "--gamma", repr(p["gamma"])]
    for k in ("n", "a", "b", "max_rounds"):
        if p[k] is not None:
            argv += [f"--{k.replace('_', '-')}", str(p[k])]
    _, f2 = run(tmp_path, *argv, name="b.csv")
    assert f1.read_bytes() == f2.read_bytes()


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("UDYN_SEED", "7")
    _, f1 = run(tmp_path, "simulate", "--n", "1000", "--seed", "1", name="a.csv")
    monkeypatch.delenv("UDYN_SEED")
    _, f2 = run(tmp_path, "simulate", "--n", "1000", "--seed", "7", name="b.csv")
    assert f1.read_bytes() == f2.read_bytes()


def test_exact_row(tmp_path):
    code, f = run(tmp_path, "exact", "--n", "36", "--start", "18,6", "--format", "json", name="e.json")
    assert code == 0
    doc = json.loads(f.read_text())
    row = doc["rows"][0]
    assert abs(row["p_alpha"] + row["p_beta"] + row["p_undecided"] - 1) <= 1e-8
    assert set(doc) == {"meta", "rows"}


def test_exact_kernel_export(tmp_path):
    k = tmp_path / "k.csv"
    code, _ = run(tmp_path, "exact", "--n", "4", "--export-kernel", str(k))
    assert code == 0
    assert k.read_text().startswith("a,b,a_next,b_next,prob\n")


def test_claims_row(tmp_path):
    code, f = run(tmp_path, "claims", "--id", "s_increase", "--n", "100000", "--trials", "2000")
    assert code == 0
    header, row = f.read_text().splitlines()[1:3]
    rec = dict(zip(header.split(","), row.split(",")))
    assert float(rec["pass_rate"]) >= 0.99


def test_worker_count_does_not_change_output(tmp_path):
    args = ["claims", "--id", "q_bounded", "--n", "10000", "--trials", "5000"]
    _, f1 = run(tmp_path, *args, "--workers", "1", name="a.csv")
    _, f2 = run(tmp_path, *args, "--workers", "2", name="b.csv")
    strip = lambda f: [ln.rsplit(",", 3)[0] for ln in f.read_text().splitlines()[1:]]  # drop wall_ms.. columns
    assert strip(f1) == strip(f2)


@pytest.mark.parametrize(
    "argv",
    [["nonsense"], ["simulate", "--n", "0"], ["simulate", "--format", "xml"], ["exact", "--start", "1;2"]],
)
def test_bad_flags_exit_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_domain_error_leaves_no_file(tmp_path, capsys):
    code, f = run(tmp_path, "simulate", "--n", "10", "--a", "20", "--b", "1")
    assert code != 0 and not f.exists()
    assert "usage" in capsys.readouterr().err
    assert os.listdir(tmp_path) == []


def test_precondition_rejected(tmp_path):
    code, f = run(tmp_path, "claims", "--id", "b_decrease", "--n", "1000", "--a", "900", "--b", "0")
    assert code != 0 and not f.exists()


def test_failed_check_exit_status(tmp_path):
    code, f = run(tmp_path, "expectations", "--n", "100", "--a", "40", "--b", "20", "--z-max", "0")
    assert code == 1 and f.exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["expectations", "--n", "100", "--a", "40", "--b", "20"],
        ["phases", "--n", "100000", "--trials", "140"],
        ["scaling", "--n-list", "256,1024,4096", "--trials", "50"],
        ["lowerbound", "--n", "65536", "--trials", "20"],
        ["symbreak", "--n", "4096", "--trials", "50"],
        ["graph", "--n", "200", "--d", "8", "--pairs", "20", "--steps", "2000"],
        ["bounds", "--trials", "20000"],
    ],
)
def test_commands_run(tmp_path, argv):
    code, f = run(tmp_path, *argv, "--format", "json", name="o.json")
    doc = json.loads(f.read_text())
    assert doc["meta"]["command"] == argv[0]
    assert doc["rows"]
    assert code == (0 if all(doc["meta"]["checks"].values()) else 1)


def test_graph_edge_roundtrip(tmp_path):
    edges = tmp_path / "g.txt"
    code, _ = run(tmp_path, "graph", "--n", "100", "--d", "6", "--pairs", "5", "--export-edges", str(edges))
    assert code == 0
    code, f = run(tmp_path, "graph", "--edges", str(edges), "--pairs", "5", name="h.csv")
    assert code == 0
