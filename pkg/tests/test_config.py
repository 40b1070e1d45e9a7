import textwrap

import pytest

from driftfb.config import ConfigError, from_dict, load_config, parse_spacing


def _write(tmp_path, body):
    p = tmp_path / "c.toml"
    p.write_text(textwrap.dedent(body))
    return p


def test_every_shipped_config_loads(configs_dir):
    files = sorted(configs_dir.glob("*.toml"))
    assert len(files) >= 12
    for f in files:
        cfg = load_config(f)
        assert cfg.name == f.stem


def test_every_acceptance_criterion_has_a_config(configs_dir):
    names = {f.stem for f in configs_dir.glob("acceptance-*.toml")}
    for k in range(1, 12):
        assert any(n.startswith(f"acceptance-{k:02d}-") for n in names), k


def test_parse_spacing():
    assert parse_spacing("2^-10") == 2.0 ** -10
    assert parse_spacing(" 2 ^ -3 ") == 0.125
    assert parse_spacing(0.5) == 0.5
    with pytest.raises(ConfigError):
        parse_spacing("1/1024")
    with pytest.raises(ConfigError):
        parse_spacing(True)


def test_defaults():
    cfg = from_dict({"scenario": "solve"})
    assert cfg.dimension == 1 and cfg.h == 2 ** -8 and cfg.R == 8
    assert cfg.kernel.values[0] == pytest.approx(0.3183098861837907)
    assert cfg.solver.omega == 1.5 and cfg.solver.tol == 1e-10
    assert cfg.drifts == ((0.0,),)
    assert cfg.obstacle["family"] == "bump"


@pytest.mark.parametrize("raw, msg", [
    ({"scenario": "dance"}, "scenario"),
    ({"scenario": "solve", "grid": {"dimension": 3}}, "dimension"),
    ({"scenario": "solve", "grid": {"h": 0.3}}, "integer"),
    ({"scenario": "solve", "grid": {"dimension": 2, "h": "2^-12", "R": 4}}, "guardrail"),
    ({"scenario": "solve", "kernel": {"kind": "sampled", "values": [1.0, 2.0, 3.0]},
      "grid": {"dimension": 1}}, "kernel"),
    ({"scenario": "solve", "grid": {"dimension": 2, "R": 4},
      "kernel": {"kind": "sampled", "values": [1, 2, 3]}}, "even number"),
    ({"scenario": "solve", "drift": {"values": [[0.0], [1.0]]}}, "sweep-drift"),
    ({"scenario": "solve", "drift": {"b": [0.0, 1.0]}}, "component"),
    ({"scenario": "solve", "obstacle": {"rho": 3.0}}, "R/3"),
    ({"scenario": "solve", "obstacle": {"family": "spike"}}, "family"),
    ({"scenario": "solve", "solver": {"omega": 2.5}}, "omega"),
    ({"scenario": "solve", "solver": {"sweeps": 3}}, "unknown key"),
    ({"scenario": "solve", "analysis": {"r_min_cells": 4}}, "8 cells"),
    ({"scenario": "solve", "analysis": {"oracle_compare": True}, "grid": {"h": "2^-8"}},
     "oracle_compare"),
    ({"scenario": "solve", "seed": -1}, "seed"),
    ({"scenario": "verify-identity", "identity": {"betas": [1.5]}}, "betas"),
    ({"scenario": "verify-identity", "identity": {"reference": ["sin"]}}, "reference"),
    ({"scenario": "barrier", "barrier": {"kappas": [0.5]}}, "kappas"),
    ({"scenario": "convergence", "grid": {"h": "2^-10"},
      "convergence": {"spacings": ["2^-10", "2^-20"]}}, "guardrail"),
    ({"scenario": "convergence", "grid": {"dimension": 2, "h": "2^-4", "R": 4},
      "convergence": {"levels": 3}}, "two levels"),
    ({"scenario": "solve", "colour": "red"}, "unknown key"),
])
def test_validation_errors(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        from_dict(raw)


def test_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "scenario = \n"))
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")


def test_sweep_and_identity_blocks(tmp_path):
    cfg = load_config(_write(tmp_path, """
        scenario = "sweep-drift"
        [drift]
        values = [[0.0], [0.5], [1.0]]
        [analysis]
        exponent_tol = 0.05
        levels = 3
    """))
    assert len(cfg.drifts) == 3
    assert cfg.analysis.window.levels == 3 and cfg.analysis.exponent_tol == 0.05
    with pytest.raises(ConfigError):
        cfg.with_scenario("solve")  # three drifts are a sweep
