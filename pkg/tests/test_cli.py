import csv
import io
import os
import subprocess
import sys

import pytest

from stabcodes import cli


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_parse_grid():
    assert list(cli.parse_grid("0:0.2:0.05")) == [0.0, 0.05, 0.1, 0.15, 0.2]
    for bad in ("0:1", "1:0:0.1", "0:1:0", "a:b:c"):
        with pytest.raises(cli.ConfigError):
            cli.parse_grid(bad)


def test_unknown_key_rejected(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("plant:\n  s_pole: 0.3\n  bogus: 1\n")
    assert cli.run_cli(["assign", "--config", str(p)]) == 2
    assert "plant.bogus" in capsys.readouterr().err


def test_unknown_code_key_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("codes:\n  x: {construction: md, k: 2, k_prime: 1, delta: 1.0, colour: red}\n")
    with pytest.raises(cli.ConfigError, match="colour"):
        cli.load_config(str(p))


def test_override_merges(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 5\nassign: {r: 3}\n")
    cfg = cli.load_config(str(p))
    assert cfg["seed"] == 5 and cfg["assign"]["r"] == 3 and cfg["assign"]["k"] == 3


def test_assign_table(capsys):
    assert cli.run_cli(["assign", "--r", "3", "--k", "2"]) == 0
    out = capsys.readouterr()
    rows = rows_of(out.out)
    assert [int(r["b"]) for r in rows] == list(range(-4, 5))
    assert set(rows[0]) == {"b", "a1", "a2", "cost"}
    assert "total_cost=3" in out.err


def test_even_ratio_is_config_error(capsys):
    assert cli.run_cli(["assign", "--r", "4"]) == 2


def test_design_accepts_default(capsys):
    assert cli.run_cli(["design"]) == 0
    row = rows_of(capsys.readouterr().out)[0]
    assert row["accepted"] == "true"
    assert float(row["sigma2_kprime"]) < float(row["lemma1_bound"])


def test_design_infeasible(capsys):
    assert cli.run_cli(["design", "--delta", "5"]) == 3
    assert capsys.readouterr().out == ""


def test_stability_rows(capsys):
    assert cli.run_cli(["stability", "--grid", "0:0.5:0.25"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert [float(r["p_loss"]) for r in rows] == [0.0, 0.25, 0.5]
    assert rows[0]["avg_stable"] == "true" and rows[-1]["mss_stable"] == "false"


def test_simulate_to_file_deterministic(tmp_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--grid", "0:0.1:0.1", "--horizon", "5000", "--seed", "3"]
    assert cli.run_cli(args + ["--out", str(out1)]) == 0
    assert cli.run_cli(args + ["--out", str(out2)]) == 0
    assert out1.read_text() == out2.read_text()
    rows = rows_of(out1.read_text())
    assert len(rows) == 2 and "md32_sigma_e2_db" in rows[0]


def test_simulate_all_diverged_exit(tmp_path):
    out = tmp_path / "d.csv"
    assert cli.run_cli(["simulate", "--grid", "1:1:0.1", "--horizon", "3000", "--out", str(out)]) == 4
    assert out.exists()


def test_no_partial_output_on_error(tmp_path, monkeypatch):
    out = tmp_path / "x.csv"
    out.write_text("old\n")

    def boom(*a, **kw):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(RuntimeError):
        cli.emit("new\n", str(out))
    assert out.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


def test_efficiency_table(capsys):
    assert cli.run_cli(["tables", "efficiency", "--horizon", "20000"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert {r["code"] for r in rows} >= {"md32", "rep21"}


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "stabcodes.cli", "assign", "--r", "3", "--k", "3"],
                         capture_output=True, text=True, env={**os.environ})
    assert res.returncode == 0
    assert res.stdout.startswith("b,a1,a2,a3,cost")


def test_bad_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        cli.run_cli(["frobnicate"])
    assert exc.value.code == 2
