import json
import textwrap

import pytest

from driftfb.cli import main
from driftfb.config import from_dict
from driftfb.experiments import run_scenario, write_report

FAST_SOLVE = """
    scenario = "{scenario}"
    name = "fast"
    [grid]
    dimension = 1
    h = "2^-8"
    R = 8
    [drift]
    {drift}
    [analysis]
    exponent_tol = 0.1
"""


def _cfg(tmp_path, scenario="solve", drift="b = [1.0]", extra="", name="c.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(FAST_SOLVE.format(scenario=scenario, drift=drift)) +
                 textwrap.dedent(extra))
    return p


def _read(path):
    return path.read_bytes()


def test_solve_writes_report(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["solve", "--config", str(_cfg(tmp_path)), "--out", str(out)])
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["verdict"]["status"] == "pass" and man["exit_code"] == 0
    assert man["config"]["scenario"] == "solve"
    assert set(man["versions"]) >= {"numpy", "scipy", "numba", "python", "driftfb"}
    for f in ("fb.csv", "residuals.csv", "checks.csv"):
        assert (out / f).exists()
    fb = (out / "fb.csv").read_text().splitlines()
    assert len(fb) == 3  # header + two free boundary points
    assert "PASS" in capsys.readouterr().out


def test_csv_bodies_are_deterministic(tmp_path):
    cfg = _cfg(tmp_path)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b")])
    for f in ("fb.csv", "residuals.csv", "checks.csv"):
        assert _read(tmp_path / "a" / f) == _read(tmp_path / "b" / f)


def test_reals_have_17_significant_digits(tmp_path):
    main(["solve", "--config", str(_cfg(tmp_path)), "--out", str(tmp_path / "o")])
    header, row = (tmp_path / "o" / "fb.csv").read_text().splitlines()[:2]
    fitted = row.split(",")[header.split(",").index("fitted")]
    assert float(fitted) == float(format(float(fitted), ".17g"))
    assert len(fitted.replace(".", "").lstrip("0")) >= 15


def test_single_member_sweep_equals_solve(tmp_path):
    main(["solve", "--config", str(_cfg(tmp_path)), "--out", str(tmp_path / "s")])
    sweep = _cfg(tmp_path, "sweep-drift", "values = [[1.0]]", name="w.toml")
    main(["sweep-drift", "--config", str(sweep), "--out", str(tmp_path / "w")])
    assert _read(tmp_path / "s" / "fb.csv") == _read(tmp_path / "w" / "fb.csv")
    rows = (tmp_path / "w" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "b,side,fitted,predicted,deviation" and len(rows) == 3


def test_workers_do_not_change_results(tmp_path):
    sweep = _cfg(tmp_path, "sweep-drift", "values = [[-0.5], [0.5]]")
    main(["sweep-drift", "--config", str(sweep), "--out", str(tmp_path / "one")])
    main(["sweep-drift", "--config", str(sweep), "--out", str(tmp_path / "two"), "--workers", "2"])
    for f in ("fb.csv", "sweep.csv", "checks.csv"):
        assert _read(tmp_path / "one" / f) == _read(tmp_path / "two" / f)


def test_reflection_check(tmp_path):
    sweep = _cfg(tmp_path, "sweep-drift", "values = [[-1.0], [1.0]]")
    cfg_path = tmp_path / "out"
    main(["sweep-drift", "--config", str(sweep), "--out", str(cfg_path)])
    text = (cfg_path / "checks.csv").read_text()
    assert text.count("reflection,") == 2
    assert "false" not in text


def test_config_error_exit_code(tmp_path, capsys):
    bad = _cfg(tmp_path, extra="""
        [kernel]
        kind = "sampled"
        values = [1.0, 2.0, 3.0]
    """)
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    assert "config error" in capsys.readouterr().err
    assert main(["chi", "--config", str(_cfg(tmp_path))]) == 2  # scenario mismatch


def test_nonconvergence_exit_code(tmp_path):
    cfg = tmp_path / "nc.toml"
    cfg.write_text(textwrap.dedent("""
        scenario = "solve"
        [grid]
        h = "2^-6"
        R = 4
        [solver]
        method = "psor"
        max_iter = 5
    """))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["verdict"]["status"] == "non-convergence"
    assert (out / "residuals.csv").exists()


def test_analysis_error_exit_code(tmp_path):
    cfg = tmp_path / "ae.toml"
    cfg.write_text(textwrap.dedent("""
        scenario = "barrier"
        [grid]
        h = "2^-8"
        [barrier]
        kappas = [0.1, 0.2]
    """))
    assert main(["barrier", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_acceptance_failure_exit_code(tmp_path):
    cfg = _cfg(tmp_path, extra="")
    text = cfg.read_text().replace("exponent_tol = 0.1", "exponent_tol = 0.0001")
    cfg.write_text(text)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_env_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("DRIFTFB_OUT", str(tmp_path / "env"))
    assert main(["solve", "--config", str(_cfg(tmp_path))]) == 0
    assert (tmp_path / "env" / "fast" / "manifest.json").exists()


def test_trivial_obstacle_report():
    cfg = from_dict({"scenario": "solve", "obstacle": {"a": -1.0}, "drift": {"b": [1.0]},
                     "analysis": {"exponent_tol": 0.05}})
    rep = run_scenario(cfg)
    assert rep.status == "pass"
    assert rep.tables["fb"].rows == []
    assert all(c.passed for c in rep.checks if c.name.startswith("apriori"))
    assert rep.members[0].solution.u.max() == 0.0


def test_trivial_obstacle_convergence_levels():
    cfg = from_dict({"scenario": "convergence", "obstacle": {"a": -1.0},
                     "convergence": {"levels": 2}})
    rep = run_scenario(cfg)
    assert rep.status == "pass"
    assert rep.tables["convergence"].rows == []
    assert all(m.solution.u.max() == 0.0 for m in rep.members)


def test_verify_identity_example():
    cfg = from_dict({"scenario": "verify-identity",
                     "identity": {"betas": [0.25], "xs": [1.0], "reference": ["cos", "cot"],
                                  "root_drifts": 3}})
    rep = run_scenario(cfg)
    row = rep.tables["identity"].rows[0]
    cols = rep.tables["identity"].columns
    oracle = row[cols.index("oracle")]
    assert row[cols.index("cos_form")] == pytest.approx(2 ** 0.5 / 8, abs=1e-15)
    assert oracle == pytest.approx(0.25, abs=1e-8)
    assert rep.check("identity-cot-form")[0].passed
    assert not rep.check("identity-cos-form")[0].passed


def test_plots(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "p"
    assert main(["solve", "--config", str(_cfg(tmp_path)), "--out", str(out), "--plots"]) == 0
    assert (out / "profile_00.svg").exists() and (out / "growth_00.svg").exists()


def test_write_report_lists_files(tmp_path):
    cfg = from_dict({"scenario": "chi", "chi": {"directions": 2}})
    rep = run_scenario(cfg)
    files = write_report(rep, tmp_path)
    assert "chi.csv" in files and "manifest.json" in files
