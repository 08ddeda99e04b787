import csv
import datetime as dt
import subprocess
import sys

import numpy as np
import pytest

from splitcop import cli
from splitcop.errors import NumericalError
from splitcop.pipeline import SyntheticSpec, read_pit, write_pit, write_synthetic_inputs
from splitcop.simulation import CriticalValueTable


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    return write_synthetic_inputs(root, SyntheticSpec(segments=((0.3, -0.3, 220),), seed=2))


def run(*args):
    return cli.main([str(a) for a in args])


def test_run_writes_outputs(inputs, tmp_path, capsys):
    stock, bond = inputs
    assert run("run", "--stock", stock, "--bond", bond, "--grid-step", 0.05, "--out", tmp_path) == 0
    for name in ("returns.csv", "summary.csv", "garch_params.csv", "pit.csv", "rolling_correlations.csv",
                 "manifest.txt"):
        assert (tmp_path / name).exists()
    assert "rolling_correlations" in capsys.readouterr().out


def test_missing_input_exits_2(tmp_path, capsys):
    assert run("run", "--stock", tmp_path / "no.csv", "--bond", tmp_path / "no.csv", "--out", tmp_path) == 2
    assert "[load]" in capsys.readouterr().err


def test_bad_config_exits_4(inputs, tmp_path):
    stock, bond = inputs
    assert run("run", "--stock", stock, "--bond", bond, "--window", 10, "--out", tmp_path) == 4
    assert run("run", "--stock", stock, "--bond", bond, "--grid-step", 0.5, "--out", tmp_path) == 4


def test_bad_cv_table_exits_2(inputs, tmp_path):
    stock, bond = inputs
    bad = tmp_path / "cv.csv"
    bad.write_text("nonsense\n")
    assert run("run", "--stock", stock, "--bond", bond, "--cv-table", bad, "--out", tmp_path) == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch, capsys):
    write_pit(tmp_path / "p.csv", [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(30)],
              np.full((30, 2), 0.5))

    def boom(*a, **k):
        raise NumericalError("likelihood non-finite in every cell")

    monkeypatch.setattr(cli, "fit_grid", boom)
    assert run("fit", "--pit", tmp_path / "p.csv") == 3
    assert "non-finite" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        run("fit")
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run("mc-moments", "--out", "x.csv", "--pairs", "0.1")
    assert e.value.code == 2


def test_simulate_and_fit(tmp_path, capsys):
    out = tmp_path / "u.csv"
    assert run("simulate", "--rho-u", 0.5, "--rho-l", -0.5, "--n", 400, "--seed", 3, "--out", out) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y"] and len(rows) == 401
    u = np.array(rows[1:], dtype=float)
    assert np.all((u > 0) & (u < 1))
    write_pit(tmp_path / "p.csv", [dt.date(2000, 1, 1) + dt.timedelta(days=i) for i in range(400)], u)
    assert run("fit", "--pit", tmp_path / "p.csv", "--grid-step", 0.05) == 0
    line = capsys.readouterr().out
    ru = float(line.split("rho_u=")[1].split()[0])
    rl = float(line.split("rho_l=")[1].split()[0])
    assert abs(ru - 0.5) < 0.2 and abs(rl + 0.5) < 0.2


def test_simulate_bad_parameter_exits_2(tmp_path):
    assert run("simulate", "--rho-u", 1.5, "--rho-l", 0, "--n", 10, "--out", tmp_path / "u.csv") == 2


def test_rolling_fit(tmp_path, inputs):
    stock, bond = inputs
    assert run("run", "--stock", stock, "--bond", bond, "--grid-step", 0.05, "--out", tmp_path / "a") == 0
    assert run("fit", "--pit", tmp_path / "a" / "pit.csv", "--window", 100, "--grid-step", 0.05,
               "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "rolling_correlations.csv").read_bytes()
    assert (tmp_path / "b" / "rolling_correlations.csv").read_bytes() == a
    dates, _ = read_pit(tmp_path / "a" / "pit.csv")
    assert len(a.splitlines()) == len(dates) - 100 + 2


def test_garch_command(inputs, tmp_path, capsys):
    stock, bond = inputs
    assert run("garch", "--input", bond, "--kind", "bond_yield", "--max-p", 1, "--out", tmp_path / "g.csv") == 0
    text = (tmp_path / "g.csv").read_text()
    assert text.startswith("series,p,mu,alpha0") and text == capsys.readouterr().out


def test_mc_commands(tmp_path, capsys):
    out = tmp_path / "m.csv"
    args = ("--n", 30, "--reps", 3, "--grid-step", 0.1, "--grid-lo", -0.9, "--grid-hi", 0.9)
    with pytest.warns(RuntimeWarning):
        assert run("mc-moments", "--out", out, "--pairs", "0.2,0.2;0,0.4", *args) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["rho_u", "rho_l"] and len(rows) == 3
    cv = tmp_path / "cv.csv"
    with pytest.warns(RuntimeWarning):
        assert run("mc-critical-values", "--out", cv, "--rho-other", "0.4,-0.4", *args) == 0
    t = CriticalValueTable.read_csv(cv)
    assert t.rho_other == (-0.4, 0.4)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "splitcop", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "mc-critical-values" in r.stdout
