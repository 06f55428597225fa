import json
import subprocess
import sys

import numpy as np
import pytest

from mcnoma.channel import Scenario
from mcnoma.cli import build_config, main, make_parser
from mcnoma.experiments import SweepSpec, run_sweep, summarize, summary_csv, trials_csv
from mcnoma.report import SolverReport
from mcnoma.sic import Allocation


def _gen(tmp_path, name, *flags):
    out = tmp_path / name
    assert main(["scenario", "gen", "-o", str(out), *flags]) == 0
    return out


def test_scenario_defaults_and_determinism(tmp_path):
    a = _gen(tmp_path, "a.json", "--seed", "4")
    b = _gen(tmp_path, "b.json", "--seed", "4")
    assert a.read_bytes() == b.read_bytes()
    sc = Scenario.from_dict(json.loads(a.read_text()))
    assert sc.shape == (8, 12)


def test_scenario_perfect_csit(tmp_path):
    p = _gen(tmp_path, "p.json", "--kappa2", "0", "--nf", "2", "--users", "3")
    sc = Scenario.from_dict(json.loads(p.read_text()))
    assert np.all(sc.grid("err_var_abs") == 0)


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_subcarriers": 3, "n_users": 5, "err_var": 0.2}))
    args = make_parser().parse_args(["scenario", "gen", "-o", "x", "--config", str(cfg),
                                     "--users", "4"])
    c = build_config(args)
    assert (c.n_subcarriers, c.n_users, c.err_var) == (3, 4, 0.2)
    args = make_parser().parse_args(["scenario", "gen", "-o", "x"])
    c = build_config(args)
    assert (c.n_subcarriers, c.n_users, c.err_var) == (8, 12, 0.1)


def test_solve_bnb_tiny(tmp_path):
    sc = _gen(tmp_path, "s.json", "--nf", "2", "--users", "3", "--rate", "2", "--seed", "1")
    out = tmp_path / "bnb"
    assert main(["solve", "--method", "bnb", "-i", str(sc), "-o", str(out)]) == 0
    rep = SolverReport.from_dict(json.loads((out / "report.json").read_text()))
    assert rep.status == "OPTIMAL"
    assert rep.notes["gap"] <= 0.01
    alloc = Allocation.from_dict(json.loads((out / "allocation.json").read_text()))
    assert alloc.check(np.full(3, 2.0)) == []


def test_solve_oracle_and_baselines(tmp_path):
    sc = _gen(tmp_path, "s.json", "--nf", "3", "--users", "4", "--rate", "1.5", "--seed", "2")
    vals = {}
    for method in ("oracle", "dc", "equal-rate", "random", "oma"):
        out = tmp_path / method
        assert main(["solve", "--method", method, "-i", str(sc), "-o", str(out)]) == 0
        vals[method] = json.loads((out / "report.json").read_text())["objective"]
    assert vals["oracle"] <= vals["equal-rate"] + 1e-9


def test_outage_command(tmp_path, capsys):
    sc = _gen(tmp_path, "s.json", "--nf", "2", "--users", "3", "--rate", "1", "--seed", "3")
    out = tmp_path / "dc"
    main(["solve", "--method", "dc", "-i", str(sc), "-o", str(out)])
    csv1 = tmp_path / "o1.csv"
    csv2 = tmp_path / "o2.csv"
    args = ["outage", "-i", str(sc), "-a", str(out / "allocation.json"), "--trials", "20000"]
    assert main(args + ["-o", str(csv1)]) == 0
    assert main(args + ["-o", str(csv2)]) == 0
    assert csv1.read_bytes() == csv2.read_bytes()
    rows = [l.split(",") for l in csv1.read_text().splitlines()[1:]]
    for _, _, d, f, n in rows:
        d, f, n = float(d), float(f), int(n)
        assert f <= d + 3 * np.sqrt(d * (1 - d) / n)
    capsys.readouterr()
    assert main(["outage", "-i", str(sc), "--naive", "--trials", "20000"]) == 0
    naive = capsys.readouterr().out.splitlines()[1:]
    assert any(float(l.split(",")[3]) > float(l.split(",")[2]) for l in naive)


def test_zero_trials_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["outage", "-i", "x.json", "--naive", "--trials", "0"])
    assert exc.value.code == 2


def test_invalid_allocation_rejected(tmp_path):
    sc = _gen(tmp_path, "s.json", "--nf", "2", "--users", "3", "--rate", "1")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(Allocation.zeros(2, 3).to_dict()))
    with pytest.raises(SystemExit):
        main(["outage", "-i", str(sc), "-a", str(bad), "--trials", "10"])


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.json"
    res = subprocess.run([sys.executable, "-m", "mcnoma", "scenario", "gen", "--nf", "1",
                          "--users", "1", "-o", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(out.read_text())["format"] == "scenario-v1"


def test_sweep_csv_deterministic(tmp_path):
    base = make_parser().parse_args(["sweep", "--axis", "rate", "--values", "1,2",
                                     "--trials", "2", "--methods", "dc,oma",
                                     "--nf", "2", "--users", "3"])
    cfg = build_config(base)
    spec = SweepSpec("rate", [1.0, 2.0], 2, ("dc", "oma"), cfg)
    a = summary_csv(summarize(run_sweep(spec)))
    b = summary_csv(summarize(run_sweep(spec, workers=2)))
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "axis_value,method,mean_power_dbm,std,trials"
    assert len(lines) == 5
    for l in lines[1:]:
        mean = l.split(",")[2]
        assert len(mean.split(".")[1]) == 2


def test_sweep_command(tmp_path):
    out = tmp_path / "sweep.csv"
    per = tmp_path / "trials.csv"
    assert main(["sweep", "--axis", "kappa2", "--values", "0,0.3", "--trials", "2",
                 "--methods", "dc", "--nf", "2", "--users", "3", "--rate", "1",
                 "-o", str(out), "--trials-output", str(per)]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert len(per.read_text().splitlines()) == 5


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("speed", [1])
    with pytest.raises(ValueError):
        SweepSpec("rate", [1], methods=("magic",))
    with pytest.raises(ValueError):
        SweepSpec("rate", [])
